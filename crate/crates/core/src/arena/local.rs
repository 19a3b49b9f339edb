//! Runs a composition as local processes: ground-truth services in this
//! process, a generated service as a child process behind a forward
//! proxy that resolves in-network host names.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use tokio::io::{AsyncBufReadExt, AsyncRead, BufReader};
use tokio::net::TcpListener;
use tokio::process::{Child, Command};
use tokio::task::JoinHandle;

use super::proxy::{self, ProxyHandle};
use super::{ArenaError, Binding, CompositionPlan, Running, Runtime, DEFAULT_DATASTORE};
use crate::codefab::GenerationProfile;
use crate::probe::Targets;
use crate::reference_services::{self, BookLookup, GtConfig, GtServer, GtService, NoLookup};

const LOG_CAP: usize = 2 * 1024 * 1024;

#[derive(Clone)]
pub struct LocalSettings {
    pub lookup: Arc<dyn BookLookup>,
    pub launch: Vec<String>,
    pub install: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub dependency_file: String,
    pub install_timeout: Duration,
}

impl Default for LocalSettings {
    fn default() -> Self {
        Self {
            lookup: Arc::new(NoLookup),
            launch: Vec::new(),
            install: Vec::new(),
            env: BTreeMap::new(),
            dependency_file: String::new(),
            install_timeout: Duration::from_secs(300),
        }
    }
}

impl LocalSettings {
    pub fn for_profile(profile: &GenerationProfile, lookup: Arc<dyn BookLookup>) -> Self {
        Self {
            lookup,
            launch: profile.launch.clone(),
            install: profile.install.clone(),
            env: profile.env.clone(),
            dependency_file: profile.dependency_file.clone(),
            ..Self::default()
        }
    }
}

pub struct LocalRuntime {
    settings: LocalSettings,
}

impl LocalRuntime {
    pub fn new(settings: LocalSettings) -> Self {
        Self { settings }
    }
}

type Buffer = Arc<Mutex<String>>;

struct GeneratedProcess {
    service: String,
    build_dir: PathBuf,
    child: Option<Child>,
    stdout: Buffer,
    stderr: Buffer,
    pumps: Vec<JoinHandle<()>>,
    failure: Option<String>,
}

struct LocalRunning {
    targets: Targets,
    servers: Vec<GtServer>,
    generated: Option<GeneratedProcess>,
    _proxy: Option<ProxyHandle>,
}

async fn check_datastore(url: &str) -> Result<(), ArenaError> {
    if url == DEFAULT_DATASTORE {
        return Ok(());
    }
    let parsed = url::Url::parse(url).map_err(|e| ArenaError::Infrastructure(format!("datastore url: {e}")))?;
    let host = parsed.host_str().unwrap_or("localhost").to_string();
    let port = parsed.port().unwrap_or(27017);
    let connect = tokio::net::TcpStream::connect((host.as_str(), port));
    match tokio::time::timeout(Duration::from_secs(2), connect).await {
        Ok(Ok(_)) => Ok(()),
        _ => Err(ArenaError::Infrastructure(format!(
            "datastore at {host}:{port} is unreachable"
        ))),
    }
}

async fn bind_local(preferred: u16) -> std::io::Result<TcpListener> {
    match TcpListener::bind(("127.0.0.1", preferred)).await {
        Ok(l) => Ok(l),
        Err(_) => TcpListener::bind("127.0.0.1:0").await,
    }
}

fn pump(reader: impl AsyncRead + Unpin + Send + 'static, buffer: Buffer) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut lines = BufReader::new(reader).lines();
        while let Ok(Some(line)) = lines.next_line().await {
            let mut b = buffer.lock().unwrap_or_else(|e| e.into_inner());
            if b.len() < LOG_CAP {
                b.push_str(&line);
                b.push('\n');
            }
        }
    })
}

fn apply(cmd: &mut Command, env: &BTreeMap<String, String>) {
    for (k, v) in env {
        cmd.env(k, v);
    }
}

fn dependency_list_empty(dir: &Path, file: &str) -> bool {
    std::fs::read_to_string(dir.join(file)).map_or(true, |t| t.trim().is_empty())
}

#[async_trait]
impl Runtime for LocalRuntime {
    async fn start(&self, plan: &CompositionPlan, _run_label: &str) -> Result<Box<dyn Running>, ArenaError> {
        check_datastore(&plan.datastore_url).await?;
        let infra = |e: std::io::Error| ArenaError::Infrastructure(e.to_string());

        let mut listeners = Vec::new();
        let mut targets = Targets::new();
        for (name, b) in &plan.bindings {
            let preferred = match b.binding {
                Binding::Generated { .. } => b.port,
                Binding::GroundTruth { .. } => 0,
            };
            let listener = bind_local(preferred).await.map_err(infra)?;
            let addr = listener.local_addr().map_err(infra)?;
            targets.insert(name.clone(), format!("http://{addr}"));
            listeners.push((name.clone(), listener));
        }

        let mut servers = Vec::new();
        let mut generated = None;
        let mut proxy_handle = None;
        for (name, listener) in listeners {
            let b = &plan.bindings[&name];
            match &b.binding {
                Binding::GroundTruth { tuning } => {
                    let service: GtService = name
                        .parse()
                        .map_err(|_| ArenaError::MissingGroundTruth(name.clone()))?;
                    let defaults = GtConfig::default();
                    let config = GtConfig {
                        peers: targets.clone().into_iter().collect(),
                        fine_per_day: tuning.fine_per_day.unwrap_or(defaults.fine_per_day),
                        loan_days: tuning.loan_days.unwrap_or(defaults.loan_days),
                        overdue_limit: tuning.overdue_limit.unwrap_or(defaults.overdue_limit),
                        lookup: self.settings.lookup.clone(),
                        ..defaults
                    };
                    servers.push(reference_services::spawn(service, listener, config).map_err(infra)?);
                }
                Binding::Generated { build_dir } => {
                    let port = listener.local_addr().map_err(infra)?.port();
                    drop(listener);
                    let mut hosts = HashMap::new();
                    for (peer, pb) in &plan.bindings {
                        hosts.insert(pb.container.to_ascii_lowercase(), targets[peer].clone());
                        hosts.insert(peer.to_ascii_lowercase(), targets[peer].clone());
                    }
                    let (proxy_origin, handle) = proxy::start(hosts).await.map_err(infra)?;
                    proxy_handle = Some(handle);
                    match self.launch(plan, &name, build_dir, port, &proxy_origin).await {
                        Ok(g) => generated = Some(g),
                        Err(e) => {
                            for s in servers {
                                GtServer::stop(s).await;
                            }
                            return Err(e);
                        }
                    }
                }
            }
        }
        Ok(Box::new(LocalRunning {
            targets,
            servers,
            generated,
            _proxy: proxy_handle,
        }))
    }
}

impl LocalRuntime {
    async fn launch(
        &self,
        plan: &CompositionPlan,
        service: &str,
        build_dir: &Path,
        port: u16,
        proxy_origin: &str,
    ) -> Result<GeneratedProcess, ArenaError> {
        let stdout: Buffer = Arc::default();
        let stderr: Buffer = Arc::default();
        let mut proc = GeneratedProcess {
            service: service.to_string(),
            build_dir: build_dir.to_path_buf(),
            child: None,
            stdout: stdout.clone(),
            stderr: stderr.clone(),
            pumps: Vec::new(),
            failure: None,
        };
        let s = &self.settings;
        if s.launch.is_empty() {
            return Err(ArenaError::Infrastructure("profile has no launch command".into()));
        }

        if !s.install.is_empty() && !dependency_list_empty(build_dir, &s.dependency_file) {
            let mut cmd = Command::new(&s.install[0]);
            cmd.args(&s.install[1..]).current_dir(build_dir).kill_on_drop(true);
            let out = tokio::time::timeout(s.install_timeout, cmd.output()).await;
            match out {
                Ok(Ok(o)) => {
                    let mut e = stderr.lock().unwrap_or_else(|e| e.into_inner());
                    e.push_str(&String::from_utf8_lossy(&o.stderr));
                    if !o.status.success() {
                        proc.failure = Some(format!("dependency installation failed ({})", o.status));
                        return Ok(proc);
                    }
                }
                Ok(Err(e)) => {
                    return Err(ArenaError::Infrastructure(format!("cannot run installer: {e}")));
                }
                Err(_) => {
                    proc.failure = Some("dependency installation timed out".into());
                    return Ok(proc);
                }
            }
        }

        let mut env = BTreeMap::new();
        env.insert("PORT".to_string(), port.to_string());
        env.insert("SERVICE_NAME".to_string(), service.to_string());
        env.insert("MONGO_URL".to_string(), plan.datastore_url.clone());
        for (peer, b) in &plan.bindings {
            let key = format!("{}_URL", peer.to_ascii_uppercase().replace(' ', "_"));
            env.insert(key, format!("http://{}:{}", b.container, b.port));
        }
        for key in ["HTTP_PROXY", "http_proxy"] {
            env.insert(key.to_string(), proxy_origin.to_string());
        }
        for key in ["NO_PROXY", "no_proxy"] {
            env.insert(key.to_string(), "127.0.0.1,localhost".to_string());
        }
        for key in &plan.passthrough_env {
            if let Ok(v) = std::env::var(key) {
                env.insert(key.clone(), v);
            }
        }
        env.extend(s.env.clone());

        let mut cmd = Command::new(&s.launch[0]);
        cmd.args(&s.launch[1..])
            .current_dir(build_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true);
        apply(&mut cmd, &env);
        let mut child = cmd
            .spawn()
            .map_err(|e| ArenaError::Infrastructure(format!("cannot launch {}: {e}", s.launch[0])))?;
        if let Some(o) = child.stdout.take() {
            proc.pumps.push(pump(o, stdout));
        }
        if let Some(e) = child.stderr.take() {
            proc.pumps.push(pump(e, stderr));
        }
        proc.child = Some(child);
        Ok(proc)
    }
}

impl GeneratedProcess {
    fn text(&self) -> String {
        let read = |b: &Buffer| b.lock().unwrap_or_else(|e| e.into_inner()).clone();
        let text = format!("{}{}", read(&self.stdout), read(&self.stderr));
        let mut text = text;
        for dir in [Some(self.build_dir.clone()), self.build_dir.canonicalize().ok()]
            .into_iter()
            .flatten()
        {
            let d = dir.to_string_lossy().to_string();
            if !d.is_empty() {
                text = text.replace(&format!("{d}/"), "");
            }
        }
        text
    }
}

#[async_trait]
impl Running for LocalRunning {
    fn targets(&self) -> &Targets {
        &self.targets
    }

    fn exited(&mut self, service: &str) -> Option<String> {
        let g = self.generated.as_mut().filter(|g| g.service == service)?;
        if let Some(f) = &g.failure {
            return Some(f.clone());
        }
        match g.child.as_mut().map(Child::try_wait) {
            Some(Ok(Some(status))) => Some(status.to_string()),
            Some(Err(e)) => Some(e.to_string()),
            _ => None,
        }
    }

    async fn logs(&mut self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        if let Some(g) = &mut self.generated {
            if let Some(child) = &mut g.child {
                let _ = child.start_kill();
                let _ = tokio::time::timeout(Duration::from_secs(5), child.wait()).await;
            }
            for p in g.pumps.drain(..) {
                let _ = tokio::time::timeout(Duration::from_secs(2), p).await;
            }
            out.insert(g.service.clone(), g.text());
        }
        out
    }

    async fn teardown(mut self: Box<Self>) -> Result<(), ArenaError> {
        if let Some(g) = &mut self.generated {
            if let Some(child) = &mut g.child {
                let _ = child.start_kill();
                let _ = tokio::time::timeout(Duration::from_secs(5), child.wait()).await;
            }
        }
        for s in self.servers.drain(..) {
            s.stop().await;
        }
        Ok(())
    }
}
