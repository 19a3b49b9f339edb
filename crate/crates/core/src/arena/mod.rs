//! Hybrid compositions: one service under test next to ground-truth
//! implementations of the others, plus the suite run and log trimming.

mod compose;
mod local;
mod proxy;
mod trim;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use indexmap::IndexMap;
use serde::Serialize;

pub use compose::{docker_available, render_compose, ComposeRuntime, ComposeSettings};
pub use local::{LocalRuntime, LocalSettings};
pub use trim::{trim_errors, TrimConfig};

use crate::probe::{Fixture, Suite, SuiteRunner, SuiteVerdict, Targets};
use crate::reference_services::GtService;
use crate::spec_model::AppSpec;

/// Datastore address promised to generated code.
pub const DEFAULT_DATASTORE: &str = "mongodb://mongo:27017/";

#[derive(Debug, thiserror::Error)]
pub enum ArenaError {
    #[error("service `{0}` is not part of the application")]
    UnknownService(String),
    #[error("no ground-truth implementation for `{0}`")]
    MissingGroundTruth(String),
    #[error("target `{0}` needs a build directory")]
    MissingArtifact(String),
    #[error("infrastructure failure: {0}")]
    Infrastructure(String),
}

/// Knobs of a ground-truth service, used for fault injection.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GtTuning {
    pub fine_per_day: Option<f64>,
    pub loan_days: Option<i64>,
    pub overdue_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binding {
    GroundTruth { tuning: GtTuning },
    Generated { build_dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceBinding {
    pub binding: Binding,
    pub container: String,
    pub port: u16,
    /// Path polled for readiness, e.g. `/cardholders`.
    pub base_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadinessPolicy {
    pub timeout: Duration,
    pub interval: Duration,
}

impl Default for ReadinessPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            interval: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositionPlan {
    pub app: String,
    pub target_service: Option<String>,
    pub bindings: IndexMap<String, ServiceBinding>,
    pub datastore_url: String,
    pub network: String,
    /// Environment variables copied from the host into every service.
    pub passthrough_env: Vec<String>,
    pub readiness: ReadinessPolicy,
}

impl CompositionPlan {
    pub fn generated_count(&self) -> usize {
        self.bindings
            .values()
            .filter(|b| matches!(b.binding, Binding::Generated { .. }))
            .count()
    }

    /// Replaces the tuning of one ground-truth binding.
    pub fn with_tuning(mut self, service: &str, tuning: GtTuning) -> Result<Self, ArenaError> {
        let b = self
            .bindings
            .get_mut(service)
            .ok_or_else(|| ArenaError::UnknownService(service.to_string()))?;
        match &mut b.binding {
            Binding::GroundTruth { tuning: t } => *t = tuning,
            Binding::Generated { .. } => return Err(ArenaError::MissingGroundTruth(service.to_string())),
        }
        Ok(self)
    }
}

/// Binds `target` to `build_dir` and every other service to ground truth.
/// With no target every service is ground truth.
pub fn plan_composition(
    spec: &AppSpec,
    target: Option<&str>,
    build_dir: Option<&Path>,
) -> Result<CompositionPlan, ArenaError> {
    if let Some(t) = target {
        if spec.service(t).is_none() {
            return Err(ArenaError::UnknownService(t.to_string()));
        }
        if build_dir.is_none() {
            return Err(ArenaError::MissingArtifact(t.to_string()));
        }
    }
    let mut bindings = IndexMap::new();
    for s in &spec.services {
        let binding = if Some(s.name.as_str()) == target {
            Binding::Generated {
                build_dir: build_dir.expect("checked above").to_path_buf(),
            }
        } else {
            s.name
                .parse::<GtService>()
                .map_err(|_| ArenaError::MissingGroundTruth(s.name.clone()))?;
            Binding::GroundTruth {
                tuning: GtTuning::default(),
            }
        };
        bindings.insert(
            s.name.clone(),
            ServiceBinding {
                binding,
                container: s.deployment.container_name.clone(),
                port: s.deployment.external_port,
                base_path: s.deployment.base_path(),
            },
        );
    }
    Ok(CompositionPlan {
        app: spec.name.clone(),
        target_service: target.map(str::to_string),
        bindings,
        datastore_url: DEFAULT_DATASTORE.to_string(),
        network: format!("{}-net", spec.name),
        passthrough_env: Vec::new(),
        readiness: ReadinessPolicy::default(),
    })
}

/// A started composition. Dropping it without [`Running::teardown`]
/// still releases its processes.
#[async_trait]
pub trait Running: Send {
    fn targets(&self) -> &Targets;
    /// `Some(reason)` once the given service has stopped.
    fn exited(&mut self, service: &str) -> Option<String>;
    async fn logs(&mut self) -> BTreeMap<String, String>;
    async fn teardown(self: Box<Self>) -> Result<(), ArenaError>;
}

#[async_trait]
pub trait Runtime: Send + Sync {
    async fn start(&self, plan: &CompositionPlan, run_label: &str) -> Result<Box<dyn Running>, ArenaError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    /// The target came up and its suite ran to completion.
    pub testable: bool,
    pub verdict: Option<SuiteVerdict>,
    pub logs: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub trimmed_errors: String,
    pub wall_time: Duration,
}

impl RunOutcome {
    pub fn passed(&self) -> usize {
        self.verdict.as_ref().map_or(0, SuiteVerdict::passed)
    }
}

async fn wait_ready(
    running: &mut dyn Running,
    service: &str,
    path: &str,
    policy: &ReadinessPolicy,
) -> Result<(), String> {
    let origin = running
        .targets()
        .get(service)
        .cloned()
        .ok_or_else(|| format!("{service} has no address"))?;
    let client = reqwest::Client::builder()
        .timeout(Duration::from_secs(2))
        .build()
        .map_err(|e| e.to_string())?;
    let url = format!("{}{}", origin.trim_end_matches('/'), path);
    let deadline = Instant::now() + policy.timeout;
    loop {
        if let Some(reason) = running.exited(service) {
            return Err(format!("{service} stopped before becoming ready ({reason})"));
        }
        if client.get(&url).send().await.is_ok() {
            return Ok(());
        }
        if Instant::now() >= deadline {
            return Err(format!(
                "{service} did not answer on {path} within {}s",
                policy.timeout.as_secs()
            ));
        }
        tokio::time::sleep(policy.interval).await;
    }
}

/// Starts `plan`, waits for readiness, runs `suite` and always tears down.
/// A target that never becomes ready gives a non-testable outcome; a
/// failing runtime or ground-truth service is an infrastructure error.
pub async fn execute(
    runtime: &dyn Runtime,
    plan: &CompositionPlan,
    suite: &Suite,
    fixture: &Fixture,
    run_label: &str,
    trim: &TrimConfig,
) -> Result<RunOutcome, ArenaError> {
    let started = Instant::now();
    let mut running = runtime.start(plan, run_label).await?;
    let result = drive(running.as_mut(), plan, suite, fixture).await;
    let logs = running.logs().await;
    if let Err(e) = running.teardown().await {
        tracing::warn!(error = %e, run_label, "teardown failed");
    }
    let (testable, verdict, notes) = result?;
    let trimmed_errors = trim_errors(&logs, verdict.as_ref(), &notes, trim);
    Ok(RunOutcome {
        testable,
        verdict,
        logs,
        notes,
        trimmed_errors,
        wall_time: started.elapsed(),
    })
}

type Drive = (bool, Option<SuiteVerdict>, Vec<String>);

async fn drive(
    running: &mut dyn Running,
    plan: &CompositionPlan,
    suite: &Suite,
    fixture: &Fixture,
) -> Result<Drive, ArenaError> {
    let mut notes = Vec::new();
    for (name, b) in &plan.bindings {
        if let Binding::GroundTruth { .. } = b.binding {
            wait_ready(running, name, &b.base_path, &plan.readiness)
                .await
                .map_err(ArenaError::Infrastructure)?;
        }
    }
    for (name, b) in &plan.bindings {
        if let Binding::Generated { .. } = b.binding {
            if let Err(reason) = wait_ready(running, name, &b.base_path, &plan.readiness).await {
                notes.push(reason);
                return Ok((false, None, notes));
            }
        }
    }
    let verdict = SuiteRunner::default()
        .run_suite(suite, fixture, running.targets())
        .await;
    Ok((true, Some(verdict), notes))
}

/// Runs every service's suite against its own all-ground-truth composition.
pub async fn smoke(
    runtime: &dyn Runtime,
    spec: &AppSpec,
    suites: &[(Suite, Fixture)],
    trim: &TrimConfig,
) -> Result<Vec<RunOutcome>, ArenaError> {
    let plan = plan_composition(spec, None, None)?;
    let mut out = Vec::new();
    for (suite, fixture) in suites {
        let label = format!("smoke-{}", suite.service.to_ascii_lowercase());
        out.push(execute(runtime, &plan, suite, fixture, &label, trim).await?);
    }
    Ok(out)
}
