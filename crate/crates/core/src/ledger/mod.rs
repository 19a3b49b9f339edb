//! Experiment batches: configuration, the generate/test/reflect/regenerate
//! loop, persisted records, aggregation and reports.

mod aggregate;
mod report;
mod runner;
mod taxonomy;

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use aggregate::{aggregate, check_version_invariant, summarize, SummaryRow};
pub use report::{render_csv, render_markdown, render_report, Report, COLUMNS, UNDEFINED};
pub use runner::{report_title, run_experiment, BatchOutcome, ExperimentContext};
pub use taxonomy::{classify_failures, FailureCategory, FailureTag};

use crate::arena::TrimConfig;
use crate::codefab::Version;
use crate::corpus::CorpusError;
use crate::prompt_forge::{GatewayError, LiveGateway, ReplayGateway, ShotMode, StubGateway, DEFAULT_REFLECTION_CAP};

pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {source}")]
    Record {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LedgerError + '_ {
    move |source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    /// `None` keeps the model's default temperature.
    #[serde(default)]
    pub temperature: Option<f64>,
    pub repetitions: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayKind {
    Live,
    Replay,
    #[default]
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub kind: GatewayKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Transcript files or directories served by the replay backend.
    #[serde(default)]
    pub recordings: Vec<PathBuf>,
    #[serde(default)]
    pub stub_file: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    300
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            kind: GatewayKind::Stub,
            endpoint: None,
            api_key_env: default_key_env(),
            recordings: Vec::new(),
            stub_file: None,
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Caps {
    pub reflection_bytes: usize,
    pub trim_bytes: usize,
    pub trim_frames: usize,
}

impl Default for Caps {
    fn default() -> Self {
        let t = TrimConfig::default();
        Self {
            reflection_bytes: DEFAULT_REFLECTION_CAP,
            trim_bytes: t.byte_cap,
            trim_frames: t.frames,
        }
    }
}

impl Caps {
    pub fn trim(&self) -> TrimConfig {
        TrimConfig {
            byte_cap: self.trim_bytes,
            frames: self.trim_frames,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeKind {
    #[default]
    Local,
    Compose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    pub kind: RuntimeKind,
    pub readiness_timeout_secs: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            kind: RuntimeKind::Local,
            readiness_timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub app: String,
    /// Services under test; empty means every service of the app.
    #[serde(default)]
    pub services: Vec<String>,
    pub model_id: String,
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub mode: ShotMode,
    #[serde(default = "default_max_gen")]
    pub max_gen: u32,
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    /// Runs executed concurrently.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Overrides the content-addressed batch id.
    #[serde(default)]
    pub batch_id: Option<String>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_max_gen() -> u32 {
    2
}

fn default_profile() -> String {
    "python-flask".into()
}

fn default_parallelism() -> usize {
    1
}

/// The parts of a config that decide what gets generated and measured.
#[derive(Serialize)]
struct Identity<'a> {
    app: &'a str,
    services: &'a [String],
    model_id: &'a str,
    schedule: &'a [ScheduleEntry],
    mode: ShotMode,
    max_gen: u32,
    profile: &'a str,
    caps: &'a Caps,
}

fn short_hash(bytes: &[u8], len: usize) -> String {
    hex::encode(Sha256::digest(bytes))[..len].to_string()
}

impl ExperimentConfig {
    /// A stub-backed single-repetition config, handy for tests.
    pub fn new(app: &str, model_id: &str) -> Self {
        Self {
            app: app.into(),
            services: Vec::new(),
            model_id: model_id.into(),
            schedule: vec![ScheduleEntry {
                temperature: None,
                repetitions: 1,
            }],
            mode: ShotMode::ZeroShot,
            max_gen: default_max_gen(),
            profile: default_profile(),
            gateway: GatewayConfig::default(),
            caps: Caps::default(),
            runtime: RuntimeConfig::default(),
            parallelism: 1,
            batch_id: None,
            base_dir: PathBuf::from("."),
        }
    }

    /// Reads TOML, or JSON when the extension says so.
    pub fn load(path: &Path) -> Result<Self, LedgerError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut config: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| LedgerError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| LedgerError::Config(format!("{}: {e}", path.display())))?
        };
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        let bad = |m: &str| Err(LedgerError::Config(m.to_string()));
        if self.max_gen < 1 {
            return bad("max_gen must be at least 1");
        }
        if self.schedule.is_empty() {
            return bad("schedule is empty");
        }
        if self.schedule.iter().any(|s| s.repetitions < 1) {
            return bad("repetitions must be at least 1");
        }
        if self
            .schedule
            .iter()
            .filter_map(|s| s.temperature)
            .any(|t| !(0.0..=2.0).contains(&t))
        {
            return bad("temperature must lie in [0, 2]");
        }
        if self.parallelism < 1 {
            return bad("parallelism must be at least 1");
        }
        if self.caps.trim_bytes == 0 || self.caps.reflection_bytes == 0 {
            return bad("caps must be positive");
        }
        if self.caps.trim_bytes > self.caps.reflection_bytes {
            return bad("trim_bytes may not exceed reflection_bytes");
        }
        match self.gateway.kind {
            GatewayKind::Live if self.gateway.endpoint.is_none() => bad("live gateway needs an endpoint"),
            GatewayKind::Replay if self.gateway.recordings.is_empty() => bad("replay gateway needs recordings"),
            GatewayKind::Stub if self.gateway.stub_file.is_none() => bad("stub gateway needs a stub_file"),
            _ => Ok(()),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn batch_id(&self) -> String {
        if let Some(id) = &self.batch_id {
            return id.clone();
        }
        let identity = Identity {
            app: &self.app,
            services: &self.services,
            model_id: &self.model_id,
            schedule: &self.schedule,
            mode: self.mode,
            max_gen: self.max_gen,
            profile: &self.profile,
            caps: &self.caps,
        };
        let bytes = serde_json::to_vec(&identity).expect("identity serializes");
        format!("batch-{}", short_hash(&bytes, 12))
    }

    /// Builds the configured gateway backend.
    pub fn build_gateway(&self) -> Result<Box<dyn crate::prompt_forge::Gateway>, LedgerError> {
        let g = &self.gateway;
        Ok(match g.kind {
            GatewayKind::Live => Box::new(LiveGateway::from_env(
                g.endpoint.as_deref().unwrap_or_default(),
                &g.api_key_env,
                Duration::from_secs(g.timeout_secs),
            )?),
            GatewayKind::Replay => {
                let paths: Vec<PathBuf> = g.recordings.iter().map(|p| self.resolve(p)).collect();
                Box::new(ReplayGateway::load(&paths)?)
            }
            GatewayKind::Stub => {
                let file = g
                    .stub_file
                    .as_deref()
                    .ok_or_else(|| LedgerError::Config("stub gateway needs a stub_file".into()))?;
                Box::new(StubGateway::load(&self.resolve(file))?)
            }
        })
    }
}

/// Content-addressed run id: service, temperature, repetition and a hash
/// of the batch they belong to.
pub fn run_id(batch_id: &str, service: &str, temperature: Option<f64>, repetition: u32) -> String {
    let t = temperature.map_or_else(|| "def".to_string(), |t| format!("{t:.2}"));
    let h = short_hash(format!("{batch_id}\0{service}\0{t}\0{repetition}").as_bytes(), 8);
    format!("{}-t{t}-r{repetition}-{h}", crate::corpus::file_stem(service))
}

/// Outcome of one version of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub service: String,
    pub temperature: Option<f64>,
    pub repetition: u32,
    pub version: Version,
    pub testable: bool,
    pub tests_passed: usize,
    pub tests_total: usize,
    pub transcript_ids: Vec<String>,
    /// Directory of this version's artifacts, relative to the batch.
    pub outcome_ref: Option<String>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub failure_tags: Vec<FailureTag>,
}

impl ExperimentRecord {
    pub fn all_passed(&self) -> bool {
        self.testable && self.tests_passed == self.tests_total
    }
}

/// Reads `records.jsonl` from a batch directory; missing means empty.
pub fn load_records(batch_dir: &Path) -> Result<Vec<ExperimentRecord>, LedgerError> {
    let path = batch_dir.join(RECORDS_FILE);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| LedgerError::Record {
                path: path.clone(),
                line: i + 1,
                source,
            })
        })
        .collect()
}
