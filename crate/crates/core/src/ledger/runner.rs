use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use super::{
    classify_failures, io_err, load_records, run_id, summarize, ExperimentConfig, ExperimentRecord, LedgerError,
    RuntimeKind, RECORDS_FILE,
};
use crate::arena::{
    self, ArenaError, ComposeRuntime, ComposeSettings, LocalRuntime, LocalSettings, RunOutcome, Runtime,
};
use crate::codefab::{materialize_build, GeneratedArtifact, GenerationProfile, Version};
use crate::corpus::{file_stem, Corpus};
use crate::probe::{Fixture, Suite};
use crate::prompt_forge::{
    build_generation_prompt, build_reflection_prompt_capped, build_regeneration_prompt, complete, CompletionRequest,
    Gateway, LlmExchange, PromptBundle, RetryPolicy, TranscriptStore,
};
use crate::reference_services::{BookLookup, NoLookup, StaticLookup};
use crate::spec_model::AppSpec;

/// Everything a batch needs besides its config.
#[derive(Clone)]
pub struct ExperimentContext {
    pub corpus: Corpus,
    pub gateway: Arc<dyn Gateway>,
    pub runtime: Arc<dyn Runtime>,
    /// Batches are written to `<runs_root>/<batch-id>/`.
    pub runs_root: PathBuf,
    pub retry: RetryPolicy,
}

impl ExperimentContext {
    pub fn new(corpus: Corpus, gateway: Arc<dyn Gateway>, runtime: Arc<dyn Runtime>, runs_root: impl Into<PathBuf>) -> Self {
        Self {
            corpus,
            gateway,
            runtime,
            runs_root: runs_root.into(),
            retry: RetryPolicy::default(),
        }
    }

    /// Gateway and runtime as described by `config`.
    pub fn from_config(
        config: &ExperimentConfig,
        corpus: Corpus,
        runs_root: impl Into<PathBuf>,
    ) -> Result<Self, LedgerError> {
        let runs_root = runs_root.into();
        let gateway: Arc<dyn Gateway> = Arc::from(config.build_gateway()?);
        let runtime: Arc<dyn Runtime> = match config.runtime.kind {
            RuntimeKind::Local => {
                let profile = corpus.profile(&config.profile)?;
                let path = corpus.books_lookup_path();
                let lookup: Arc<dyn BookLookup> = match StaticLookup::load(&path) {
                    Ok(l) => Arc::new(l),
                    Err(_) => Arc::new(NoLookup),
                };
                Arc::new(LocalRuntime::new(LocalSettings::for_profile(&profile, lookup)))
            }
            RuntimeKind::Compose => Arc::new(ComposeRuntime::new(ComposeSettings::new(
                runs_root.join(config.batch_id()),
                corpus.root(),
            ))),
        };
        Ok(Self::new(corpus, gateway, runtime, runs_root))
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub batch_id: String,
    pub batch_dir: PathBuf,
    /// Every record of the batch, in schedule order.
    pub records: Vec<ExperimentRecord>,
    pub executed_runs: usize,
    pub skipped_runs: usize,
}

struct Job {
    index: usize,
    service: String,
    temperature: Option<f64>,
    repetition: u32,
    run_id: String,
}

struct RunEnv {
    config: ExperimentConfig,
    batch_dir: PathBuf,
    spec: AppSpec,
    profile: GenerationProfile,
    suites: BTreeMap<String, (Suite, Fixture)>,
    gateway: Arc<dyn Gateway>,
    runtime: Arc<dyn Runtime>,
    retry: RetryPolicy,
    sink: Mutex<()>,
}

impl RunEnv {
    fn persist(&self, records: &[ExperimentRecord]) -> Result<(), LedgerError> {
        let _guard = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.batch_dir.join(RECORDS_FILE);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut body = String::new();
        for r in records {
            body.push_str(&serde_json::to_string(r).expect("record serializes"));
            body.push('\n');
        }
        f.write_all(body.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }
}

/// Runs every (service, temperature, repetition) of `config`. Records are
/// appended to `records.jsonl` as each run finishes; runs already recorded
/// there are skipped, so an interrupted batch resumes where it stopped.
pub async fn run_experiment(config: &ExperimentConfig, ctx: &ExperimentContext) -> Result<BatchOutcome, LedgerError> {
    config.validate()?;
    let spec = ctx.corpus.load_spec(&config.app)?;
    let services: Vec<String> = if config.services.is_empty() {
        spec.services.iter().map(|s| s.name.clone()).collect()
    } else {
        config.services.clone()
    };
    let mut suites = BTreeMap::new();
    for s in &services {
        if spec.service(s).is_none() {
            return Err(LedgerError::Config(format!("service `{s}` is not part of {}", config.app)));
        }
        suites.insert(
            s.clone(),
            (ctx.corpus.load_suite(&config.app, s)?, ctx.corpus.load_fixture(&config.app, s)?),
        );
    }
    let profile = ctx.corpus.profile(&config.profile)?;

    let batch_id = config.batch_id();
    let batch_dir = ctx.runs_root.join(&batch_id);
    std::fs::create_dir_all(&batch_dir).map_err(io_err(&batch_dir))?;
    let config_path = batch_dir.join("config.json");
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(config).expect("config serializes") + "\n",
    )
    .map_err(io_err(&config_path))?;

    let mut jobs = Vec::new();
    for service in &services {
        for entry in &config.schedule {
            for repetition in 0..entry.repetitions {
                jobs.push(Job {
                    index: jobs.len(),
                    service: service.clone(),
                    temperature: entry.temperature,
                    repetition,
                    run_id: run_id(&batch_id, service, entry.temperature, repetition),
                });
            }
        }
    }
    let order: BTreeMap<String, usize> = jobs.iter().map(|j| (j.run_id.clone(), j.index)).collect();

    let done: std::collections::BTreeSet<String> =
        load_records(&batch_dir)?.into_iter().map(|r| r.run_id).collect();
    let (skipped, todo): (Vec<Job>, Vec<Job>) = jobs.into_iter().partition(|j| done.contains(&j.run_id));

    let env = Arc::new(RunEnv {
        config: config.clone(),
        batch_dir: batch_dir.clone(),
        spec,
        profile,
        suites,
        gateway: ctx.gateway.clone(),
        runtime: ctx.runtime.clone(),
        retry: ctx.retry.clone(),
        sink: Mutex::new(()),
    });
    let executed = todo.len();
    let permits = Arc::new(Semaphore::new(config.parallelism));
    let mut set = JoinSet::new();
    for job in todo {
        let env = env.clone();
        let permits = permits.clone();
        set.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore open");
            tracing::info!(run_id = %job.run_id, "run started");
            let records = run_one(&env, &job).await;
            env.persist(&records)
        });
    }
    while let Some(joined) = set.join_next().await {
        joined.map_err(|e| LedgerError::Config(format!("run task failed: {e}")))??;
    }

    let mut records = load_records(&batch_dir)?;
    records.retain(|r| order.contains_key(&r.run_id));
    records.sort_by_key(|r| (order[&r.run_id], r.version));

    let rows = summarize(&records, &services);
    let report = super::render_report(&report_title(config), &rows);
    for (name, body) in [("report.md", &report.markdown), ("report.csv", &report.csv)] {
        let path = batch_dir.join(name);
        std::fs::write(&path, body).map_err(io_err(&path))?;
    }

    Ok(BatchOutcome {
        batch_id,
        batch_dir,
        records,
        executed_runs: executed,
        skipped_runs: skipped.len(),
    })
}

pub fn report_title(config: &ExperimentConfig) -> String {
    format!("{}: {} ({})", config.app, config.model_id, config.mode.as_str())
}

/// What one version produced before deciding whether to go on.
struct Evaluation {
    record: ExperimentRecord,
    artifact: Option<GeneratedArtifact>,
    /// Error report for reflection; empty when there is nothing to fix.
    report: String,
    /// Stop the run after this version.
    terminal: bool,
}

async fn ask(env: &RunEnv, store: &TranscriptStore, job: &Job, prompt: String, tag: String) -> Result<LlmExchange, String> {
    let request = CompletionRequest::new(&env.config.model_id, job.temperature, prompt).tagged(tag);
    complete(env.gateway.as_ref(), store, &request, &env.retry)
        .await
        .map_err(|e| format!("model call failed: {e}"))
}

fn write(path: &Path, body: &str) -> Result<(), String> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    std::fs::write(path, body).map_err(|e| format!("{}: {e}", path.display()))
}

fn save_outcome(dir: &Path, outcome: &RunOutcome) -> Result<(), String> {
    if let Some(v) = &outcome.verdict {
        write(&dir.join("verdicts.jsonl"), &v.to_jsonl())?;
    }
    write(&dir.join("trimmed_errors.txt"), &outcome.trimmed_errors)?;
    for (service, text) in &outcome.logs {
        write(&dir.join("logs").join(format!("{}.log", file_stem(service))), text)?;
    }
    Ok(())
}

async fn evaluate(
    env: &RunEnv,
    job: &Job,
    version: Version,
    reply: &str,
    previous: Option<&GeneratedArtifact>,
    mut record: ExperimentRecord,
) -> Evaluation {
    let stop = |mut record: ExperimentRecord, note: String| {
        record.failure_tags = classify_failures(&note);
        record.notes.push(note);
        Evaluation {
            record,
            artifact: None,
            report: String::new(),
            terminal: true,
        }
    };
    let built = match previous {
        None => GeneratedArtifact::initial(&job.run_id, &job.service, reply, &env.profile),
        Some(prev) => prev.regenerate(reply, &env.profile),
    };
    let mut artifact = match built {
        Ok(a) => a,
        Err(e) => return stop(record, format!("no usable code: {e}")),
    };
    record.notes.extend(artifact.notes.iter().cloned());

    let version_dir = env.batch_dir.join(&job.run_id).join(version.to_string());
    let port = env
        .spec
        .service(&job.service)
        .map(|s| s.deployment.external_port)
        .unwrap_or(8000);
    let build_dir = match materialize_build(&mut artifact, &env.profile, port, &version_dir.join("build")) {
        Ok(d) => d,
        Err(e) => return stop(record, format!("infrastructure: {e}")),
    };
    let artifact_json = serde_json::to_string_pretty(&artifact).expect("artifact serializes") + "\n";
    if let Err(e) = write(&version_dir.join("artifact.json"), &artifact_json) {
        return stop(record, format!("infrastructure: {e}"));
    }

    let mut plan = match arena::plan_composition(&env.spec, Some(&job.service), Some(&build_dir)) {
        Ok(p) => p,
        Err(e) => return stop(record, format!("infrastructure: {e}")),
    };
    plan.readiness.timeout = Duration::from_secs(env.config.runtime.readiness_timeout_secs);
    let (suite, fixture) = &env.suites[&job.service];
    let label = format!("{}-{}", job.run_id, version);
    let outcome = match arena::execute(
        env.runtime.as_ref(),
        &plan,
        suite,
        fixture,
        &label,
        &env.config.caps.trim(),
    )
    .await
    {
        Ok(o) => o,
        Err(e @ ArenaError::Infrastructure(_)) => return stop(record, e.to_string()),
        Err(e) => return stop(record, format!("infrastructure: {e}")),
    };
    if let Err(e) = save_outcome(&version_dir, &outcome) {
        return stop(record, format!("infrastructure: {e}"));
    }

    record.testable = outcome.testable;
    record.tests_passed = outcome.passed();
    record.notes.extend(outcome.notes.iter().cloned());
    let mut report = outcome.trimmed_errors.clone();
    let clean = record.all_passed();
    if !clean && report.trim().is_empty() {
        report = if outcome.testable {
            "Some tests failed without further output.".to_string()
        } else {
            "The service did not start and produced no output.".to_string()
        };
    }
    if !clean {
        record.failure_tags = classify_failures(&report);
    }
    Evaluation {
        record,
        artifact: Some(artifact),
        report: if clean { String::new() } else { report },
        terminal: clean,
    }
}

/// One run: V0, then reflection and regeneration while tests fail and
/// versions remain. Never fails; problems end up in record notes.
async fn run_one(env: &RunEnv, job: &Job) -> Vec<ExperimentRecord> {
    let run_dir = env.batch_dir.join(&job.run_id);
    if run_dir.exists() {
        let _ = std::fs::remove_dir_all(&run_dir);
    }
    let store = TranscriptStore::new(run_dir.join("transcripts.jsonl"));
    let total = env.suites[&job.service].0.cases.len();
    let fresh = |version: Version, transcript_ids: Vec<String>| ExperimentRecord {
        run_id: job.run_id.clone(),
        service: job.service.clone(),
        temperature: job.temperature,
        repetition: job.repetition,
        version,
        testable: false,
        tests_passed: 0,
        tests_total: total,
        transcript_ids,
        outcome_ref: Some(format!("{}/{}", job.run_id, version)),
        notes: Vec::new(),
        failure_tags: Vec::new(),
    };

    let mut records = Vec::new();
    let prompt = PromptBundle::new(&env.spec, &env.profile, &job.service, env.config.mode)
        .map_err(|e| e.to_string())
        .and_then(|b| build_generation_prompt(&b).map_err(|e| e.to_string()));
    let prompt = match prompt {
        Ok(p) => p,
        Err(e) => {
            let mut r = fresh(Version::V0, Vec::new());
            r.notes.push(format!("prompt: {e}"));
            records.push(r);
            return records;
        }
    };
    let mut exchange = match ask(env, &store, job, prompt, format!("{}/V0/generation", job.run_id)).await {
        Ok(x) => x,
        Err(note) => {
            let mut r = fresh(Version::V0, Vec::new());
            r.notes.push(note);
            records.push(r);
            return records;
        }
    };
    let mut pending = vec![exchange.transcript_id.clone()];
    let mut version = Version::V0;
    let mut previous: Option<GeneratedArtifact> = None;
    loop {
        let record = fresh(version, std::mem::take(&mut pending));
        let eval = evaluate(env, job, version, &exchange.reply, previous.as_ref(), record).await;
        records.push(eval.record);
        if eval.terminal || version.0 + 1 >= env.config.max_gen {
            break;
        }
        let Some(artifact) = eval.artifact else { break };

        let next = version.next();
        let reflection = match build_reflection_prompt_capped(&eval.report, env.config.caps.reflection_bytes) {
            Ok(p) => ask(env, &store, job, p, format!("{}/{}/reflection", job.run_id, version)).await,
            Err(e) => Err(format!("reflection prompt: {e}")),
        };
        let reflection = match reflection {
            Ok(x) => x,
            Err(note) => {
                let mut r = fresh(next, Vec::new());
                r.notes.push(note);
                records.push(r);
                break;
            }
        };
        pending.push(reflection.transcript_id.clone());
        let regenerated = match build_regeneration_prompt(&artifact.source, &reflection.reply) {
            Ok(p) => ask(env, &store, job, p, format!("{}/{}/regeneration", job.run_id, next)).await,
            Err(e) => Err(format!("regeneration prompt: {e}")),
        };
        match regenerated {
            Ok(x) => {
                pending.push(x.transcript_id.clone());
                exchange = x;
            }
            Err(note) => {
                let mut r = fresh(next, std::mem::take(&mut pending));
                r.notes.push(note);
                records.push(r);
                break;
            }
        }
        previous = Some(artifact);
        version = next;
    }
    records
}
