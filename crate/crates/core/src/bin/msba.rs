use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use msba_harness::arena::{self, ComposeRuntime, ComposeSettings, LocalRuntime, LocalSettings, Runtime, TrimConfig};
use msba_harness::complexity;
use msba_harness::ledger::{self, ExperimentConfig, ExperimentContext};
use msba_harness::prompt_forge::{Gateway, LiveGateway, ReplayGateway, TranscriptStore};
use msba_harness::reference_services::{self, BookLookup, GoogleBooksLookup, GtConfig, GtService, NoLookup, StaticLookup};
use msba_harness::Corpus;

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: &str) {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("stdout: {e}");
        }
    }
}

macro_rules! out {
    ($($arg:tt)*) => { emit(&format!($($arg)*)) };
}

macro_rules! outln {
    ($($arg:tt)*) => { emit(&(format!($($arg)*) + "\n")) };
}

#[derive(Parser)]
#[command(name = "msba", version, about = "Generate, deploy and test microservice applications")]
struct Cli {
    /// Repository root holding corpus/ and profiles/.
    #[arg(long, global = true, env = "MSBA_ROOT")]
    root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuntimeChoice {
    Local,
    Compose,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeBackend {
    Live,
    Replay,
}

#[derive(Subcommand)]
enum Command {
    /// Size, dependency and package figures of an application.
    Measure {
        app: String,
        #[arg(long, default_value = "python-flask")]
        profile: String,
        #[arg(long)]
        json: bool,
    },
    /// Runs every suite against an all-ground-truth composition.
    Smoke {
        app: String,
        #[arg(long, value_enum, default_value = "local")]
        runtime: RuntimeChoice,
        /// Repeat the whole smoke run and compare verdict vectors.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
    /// Executes an experiment batch described by a TOML or JSON file.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
    /// Re-renders the report of a batch directory.
    Report { batch_dir: PathBuf },
    /// Asks a model to rate the difficulty of an application.
    Judge {
        app: String,
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value = "replay")]
        backend: JudgeBackend,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "OPENAI_API_KEY")]
        api_key_env: String,
        /// Recordings for the replay backend; defaults to the app's recordings.
        #[arg(long)]
        recordings: Option<PathBuf>,
        #[arg(long, default_value = "runs/judge/transcripts.jsonl")]
        transcripts: PathBuf,
    },
    /// Serves one ground-truth service; peers come from `<PEER>_URL`.
    ServeGt {
        service: String,
        #[arg(long)]
        port: u16,
        #[arg(long)]
        fine_per_day: Option<f64>,
        #[arg(long)]
        loan_days: Option<i64>,
        #[arg(long)]
        overdue_limit: Option<usize>,
    },
}

fn local_runtime(corpus: &Corpus) -> Result<LocalRuntime> {
    let profile = corpus.profile("python-flask")?;
    let lookup: Arc<dyn BookLookup> = match StaticLookup::load(&corpus.books_lookup_path()) {
        Ok(l) => Arc::new(l),
        Err(_) => Arc::new(NoLookup),
    };
    Ok(LocalRuntime::new(LocalSettings::for_profile(&profile, lookup)))
}

async fn smoke(corpus: &Corpus, app: &str, choice: RuntimeChoice, repeat: usize, runs_dir: &Path) -> Result<bool> {
    let spec = corpus.load_spec(app)?;
    let mut suites = Vec::new();
    for s in &spec.services {
        suites.push((corpus.load_suite(app, &s.name)?, corpus.load_fixture(app, &s.name)?));
    }
    let runtime: Box<dyn Runtime> = match choice {
        RuntimeChoice::Local => Box::new(local_runtime(corpus)?),
        RuntimeChoice::Compose => Box::new(ComposeRuntime::new(ComposeSettings::new(runs_dir, corpus.root()))),
    };
    let mut vectors: Vec<Vec<Vec<bool>>> = Vec::new();
    let mut ok = true;
    for round in 0..repeat.max(1) {
        let outcomes = arena::smoke(runtime.as_ref(), &spec, &suites, &TrimConfig::default()).await?;
        let (mut passed, mut total) = (0, 0);
        let mut vector = Vec::new();
        for o in &outcomes {
            let v = o.verdict.as_ref().context("smoke run produced no verdict")?;
            outln!("round {}: {}: {}/{}", round + 1, v.service, v.passed(), v.total());
            for line in v.failure_lines() {
                outln!("  {line}");
            }
            passed += v.passed();
            total += v.total();
            vector.push(v.vector());
        }
        outln!("round {}: total {passed}/{total}", round + 1);
        ok &= passed == total;
        vectors.push(vector);
    }
    if vectors.windows(2).any(|w| w[0] != w[1]) {
        outln!("verdict vectors differ between rounds");
        ok = false;
    }
    Ok(ok)
}

fn report(batch_dir: &Path) -> Result<()> {
    let config: ExperimentConfig = serde_json::from_str(
        &std::fs::read_to_string(batch_dir.join("config.json")).context("batch has no config.json")?,
    )?;
    let records = ledger::load_records(batch_dir)?;
    let services: Vec<String> = if config.services.is_empty() {
        let mut seen = Vec::new();
        for r in &records {
            if !seen.contains(&r.service) {
                seen.push(r.service.clone());
            }
        }
        seen
    } else {
        config.services.clone()
    };
    for problem in ledger::check_version_invariant(&records) {
        eprintln!("lint: {problem}");
    }
    let rows = ledger::summarize(&records, &services);
    let r = ledger::render_report(&ledger::report_title(&config), &rows);
    std::fs::write(batch_dir.join("report.md"), &r.markdown)?;
    std::fs::write(batch_dir.join("report.csv"), &r.csv)?;
    out!("{}", r.markdown);
    Ok(())
}

async fn serve_gt(
    name: &str,
    port: u16,
    fine_per_day: Option<f64>,
    loan_days: Option<i64>,
    overdue_limit: Option<usize>,
) -> Result<()> {
    let service: GtService = name.parse().map_err(|_| anyhow::anyhow!("no ground truth for `{name}`"))?;
    let mut config = GtConfig::default();
    for s in GtService::ALL {
        let var = format!("{}_URL", s.name().to_ascii_uppercase());
        if let Ok(url) = std::env::var(&var) {
            config.peers.insert(s.name().to_string(), url);
        }
    }
    if let Some(f) = fine_per_day {
        config.fine_per_day = f;
    }
    if let Some(d) = loan_days {
        config.loan_days = d;
    }
    if let Some(l) = overdue_limit {
        config.overdue_limit = l;
    }
    config.lookup = match std::env::var("GT_BOOKS_LOOKUP").ok().as_deref() {
        Some("google") => Arc::new(GoogleBooksLookup::new(reqwest::Client::new())),
        Some(path) if !path.is_empty() => Arc::new(StaticLookup::load(Path::new(path))?),
        _ => Arc::new(NoLookup),
    };
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    let server = reference_services::spawn(service, listener, config)?;
    tracing::info!(service = name, origin = %server.origin(), "serving");
    tokio::signal::ctrl_c().await?;
    server.stop().await;
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let corpus = cli.root.map_or_else(Corpus::discover, Corpus::new);
    match cli.command {
        Command::Measure { app, profile, json } => {
            let profile = corpus.profile(&profile)?;
            let r = complexity::measure(&corpus, &app, &profile)?;
            if json {
                outln!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                out!("{}", r.to_markdown());
            }
        }
        Command::Smoke {
            app,
            runtime,
            repeat,
            runs_dir,
        } => {
            if !smoke(&corpus, &app, runtime, repeat, &runs_dir).await? {
                bail!("smoke run failed");
            }
        }
        Command::Run { config, runs_dir } => {
            let config = ExperimentConfig::load(&config)?;
            let ctx = ExperimentContext::from_config(&config, corpus, &runs_dir)?;
            let out = ledger::run_experiment(&config, &ctx).await?;
            outln!(
                "{}: {} runs executed, {} resumed",
                out.batch_dir.display(),
                out.executed_runs,
                out.skipped_runs
            );
            out!("{}", std::fs::read_to_string(out.batch_dir.join("report.md"))?);
        }
        Command::Report { batch_dir } => report(&batch_dir)?,
        Command::Judge {
            app,
            model,
            backend,
            endpoint,
            api_key_env,
            recordings,
            transcripts,
        } => {
            let spec = corpus.load_spec(&app)?;
            let gateway: Box<dyn Gateway> = match backend {
                JudgeBackend::Live => Box::new(LiveGateway::from_env(
                    endpoint.as_deref().context("--endpoint is required for a live judge")?,
                    &api_key_env,
                    Duration::from_secs(300),
                )?),
                JudgeBackend::Replay => Box::new(ReplayGateway::load(&[
                    recordings.unwrap_or_else(|| corpus.recordings_dir(&app))
                ])?),
            };
            let store = TranscriptStore::new(transcripts);
            let text = msba_harness::spec_model::render_prompt_text(&spec);
            let verdict = complexity::llm_difficulty(&text, gateway.as_ref(), &store, &model).await?;
            let out: BTreeMap<&str, serde_json::Value> = BTreeMap::from([
                ("app", app.into()),
                ("model", model.into()),
                ("score", verdict.score.into()),
                ("rationale", verdict.rationale.into()),
            ]);
            outln!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::ServeGt {
            service,
            port,
            fine_per_day,
            loan_days,
            overdue_limit,
        } => serve_gt(&service, port, fine_per_day, loan_days, overdue_limit).await?,
    }
    Ok(())
}
