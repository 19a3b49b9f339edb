//! Runs a composition with `docker compose`. Ground-truth services share
//! one cached image; the generated service is built from its directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use async_trait::async_trait;
use tokio::process::Command;

use super::{ArenaError, Binding, CompositionPlan, Running, Runtime};
use crate::probe::Targets;

#[derive(Debug, Clone)]
pub struct ComposeSettings {
    pub docker: String,
    /// Directory receiving `<run-label>/compose/docker-compose.yml`.
    pub runs_dir: PathBuf,
    /// Repository root, used as the ground-truth image build context.
    pub repo_root: PathBuf,
    pub gt_image: String,
    pub datastore_image: String,
    /// Added to every published port so concurrent runs do not clash.
    pub port_offset: u16,
}

impl ComposeSettings {
    pub fn new(runs_dir: impl Into<PathBuf>, repo_root: impl Into<PathBuf>) -> Self {
        Self {
            docker: "docker".into(),
            runs_dir: runs_dir.into(),
            repo_root: repo_root.into(),
            gt_image: "msba-gt:latest".into(),
            datastore_image: "mongo:7".into(),
            port_offset: 0,
        }
    }
}

pub struct ComposeRuntime {
    settings: ComposeSettings,
}

impl ComposeRuntime {
    pub fn new(settings: ComposeSettings) -> Self {
        Self { settings }
    }

    async fn docker(&self, args: &[&str]) -> Result<std::process::Output, ArenaError> {
        Command::new(&self.settings.docker)
            .args(args)
            .output()
            .await
            .map_err(|e| ArenaError::Infrastructure(format!("cannot run {}: {e}", self.settings.docker)))
    }

    async fn ensure_gt_image(&self) -> Result<(), ArenaError> {
        let s = &self.settings;
        if self.docker(&["image", "inspect", &s.gt_image]).await?.status.success() {
            return Ok(());
        }
        let dockerfile = s.repo_root.join("docker/gt.Dockerfile");
        let root = s.repo_root.to_string_lossy().to_string();
        let out = self
            .docker(&["build", "-t", &s.gt_image, "-f", &dockerfile.to_string_lossy(), &root])
            .await?;
        if !out.status.success() {
            return Err(ArenaError::Infrastructure(format!(
                "ground-truth image build failed: {}",
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        Ok(())
    }
}

fn project_name(label: &str) -> String {
    let mut s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.truncate(60);
    format!("msba-{}", s.trim_matches('-'))
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// The compose document for `plan`.
pub fn render_compose(plan: &CompositionPlan, settings: &ComposeSettings, project: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name: {}", quote(project));
    out.push_str("services:\n  mongo:\n");
    let _ = writeln!(out, "    image: {}", quote(&settings.datastore_image));
    out.push_str("    networks: [app]\n");
    let peers: BTreeMap<String, String> = plan
        .bindings
        .iter()
        .map(|(name, b)| {
            (
                format!("{}_URL", name.to_ascii_uppercase().replace(' ', "_")),
                format!("http://{}:{}", b.container, b.port),
            )
        })
        .collect();
    for (name, b) in &plan.bindings {
        let _ = writeln!(out, "  {}:", b.container);
        match &b.binding {
            Binding::GroundTruth { tuning } => {
                let _ = writeln!(out, "    image: {}", quote(&settings.gt_image));
                let mut cmd = vec![
                    "serve-gt".to_string(),
                    name.clone(),
                    "--port".to_string(),
                    b.port.to_string(),
                ];
                if let Some(f) = tuning.fine_per_day {
                    cmd.extend(["--fine-per-day".to_string(), f.to_string()]);
                }
                if let Some(d) = tuning.loan_days {
                    cmd.extend(["--loan-days".to_string(), d.to_string()]);
                }
                if let Some(l) = tuning.overdue_limit {
                    cmd.extend(["--overdue-limit".to_string(), l.to_string()]);
                }
                let cmd: Vec<String> = cmd.iter().map(|c| quote(c)).collect();
                let _ = writeln!(out, "    command: [{}]", cmd.join(", "));
            }
            Binding::Generated { build_dir } => {
                let _ = writeln!(out, "    build: {}", quote(&build_dir.to_string_lossy()));
            }
        }
        let _ = writeln!(out, "    container_name: {}", quote(&format!("{project}-{}", b.container)));
        out.push_str("    environment:\n");
        let _ = writeln!(out, "      PORT: {}", quote(&b.port.to_string()));
        let _ = writeln!(out, "      MONGO_URL: {}", quote(&plan.datastore_url));
        for (k, v) in &peers {
            let _ = writeln!(out, "      {k}: {}", quote(v));
        }
        for k in &plan.passthrough_env {
            let _ = writeln!(out, "      {k}: ${{{k}:-}}");
        }
        let _ = writeln!(
            out,
            "    ports: [{}]",
            quote(&format!("127.0.0.1:{}:{}", b.port + settings.port_offset, b.port))
        );
        out.push_str("    depends_on: [mongo]\n    networks: [app]\n");
    }
    let _ = writeln!(out, "networks:\n  app:\n    name: {}", quote(&format!("{project}-{}", plan.network)));
    out
}

struct ComposeRunning {
    docker: String,
    file: PathBuf,
    project: String,
    targets: Targets,
    containers: BTreeMap<String, String>,
    failure: Option<(String, String)>,
    build_log: String,
}

impl ComposeRunning {
    fn compose(&self) -> Command {
        let mut c = Command::new(&self.docker);
        c.arg("compose")
            .arg("-p")
            .arg(&self.project)
            .arg("-f")
            .arg(&self.file);
        c
    }
}

#[async_trait]
impl Runtime for ComposeRuntime {
    async fn start(&self, plan: &CompositionPlan, run_label: &str) -> Result<Box<dyn Running>, ArenaError> {
        let version = self.docker(&["compose", "version"]).await?;
        if !version.status.success() {
            return Err(ArenaError::Infrastructure("docker compose is not available".into()));
        }
        self.ensure_gt_image().await?;
        let project = project_name(run_label);
        let dir = self.settings.runs_dir.join(run_label).join("compose");
        std::fs::create_dir_all(&dir).map_err(|e| ArenaError::Infrastructure(e.to_string()))?;
        let file = dir.join("docker-compose.yml");
        std::fs::write(&file, render_compose(plan, &self.settings, &project))
            .map_err(|e| ArenaError::Infrastructure(e.to_string()))?;

        let targets = plan
            .bindings
            .iter()
            .map(|(name, b)| {
                (
                    name.clone(),
                    format!("http://127.0.0.1:{}", b.port + self.settings.port_offset),
                )
            })
            .collect();
        let containers = plan
            .bindings
            .iter()
            .map(|(name, b)| (name.clone(), b.container.clone()))
            .collect();
        let mut running = ComposeRunning {
            docker: self.settings.docker.clone(),
            file,
            project,
            targets,
            containers,
            failure: None,
            build_log: String::new(),
        };
        let up = running
            .compose()
            .args(["up", "-d", "--build"])
            .output()
            .await
            .map_err(|e| ArenaError::Infrastructure(e.to_string()))?;
        if !up.status.success() {
            let log = String::from_utf8_lossy(&up.stderr).to_string();
            match &plan.target_service {
                Some(t) => {
                    running.failure = Some((t.clone(), "image build or start failed".into()));
                    running.build_log = log;
                }
                None => {
                    let _ = Box::new(running).teardown().await;
                    return Err(ArenaError::Infrastructure(format!("compose up failed: {log}")));
                }
            }
        }
        Ok(Box::new(running))
    }
}

#[async_trait]
impl Running for ComposeRunning {
    fn targets(&self) -> &Targets {
        &self.targets
    }

    fn exited(&mut self, service: &str) -> Option<String> {
        if let Some((s, reason)) = &self.failure {
            if s == service {
                return Some(reason.clone());
            }
        }
        let container = self.containers.get(service)?;
        let out = std::process::Command::new(&self.docker)
            .args(["compose", "-p", &self.project, "-f"])
            .arg(&self.file)
            .args(["ps", "--status", "exited", "--services"])
            .output()
            .ok()?;
        String::from_utf8_lossy(&out.stdout)
            .lines()
            .any(|l| l.trim() == container)
            .then(|| "container exited".to_string())
    }

    async fn logs(&mut self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (service, container) in self.containers.clone() {
            let logs = self
                .compose()
                .args(["logs", "--no-color", "--no-log-prefix", &container])
                .output()
                .await
                .map(|o| String::from_utf8_lossy(&o.stdout).to_string() + &String::from_utf8_lossy(&o.stderr))
                .unwrap_or_default();
            out.insert(service, logs);
        }
        if let Some((service, _)) = &self.failure {
            out.entry(service.clone()).or_default().push_str(&self.build_log);
        }
        out
    }

    async fn teardown(self: Box<Self>) -> Result<(), ArenaError> {
        let out = self
            .compose()
            .args(["down", "-v", "--remove-orphans"])
            .output()
            .await
            .map_err(|e| ArenaError::Infrastructure(e.to_string()))?;
        if out.status.success() {
            Ok(())
        } else {
            Err(ArenaError::Infrastructure(String::from_utf8_lossy(&out.stderr).to_string()))
        }
    }
}

/// Whether a docker binary answers at all.
pub fn docker_available(docker: &str) -> bool {
    std::process::Command::new(docker)
        .arg("version")
        .output()
        .is_ok_and(|o| o.status.success())
}
