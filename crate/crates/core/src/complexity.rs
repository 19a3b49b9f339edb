//! Specification complexity: size, dependencies, packages and a
//! model-assigned difficulty score.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::codefab::{third_party_modules, GenerationProfile};
use crate::prompt_forge::{self, Gateway, GatewayError, TranscriptStore};
use crate::spec_model::{render_prompt_text, AppSpec};
use crate::Corpus;

#[derive(Debug, thiserror::Error)]
pub enum ComplexityError {
    #[error("dependency manifest names undeclared service `{0}`")]
    UndeclaredService(String),
    #[error("{service} depends on undeclared internal service `{target}`")]
    UndeclaredTarget { service: String, target: String },
    #[error("package statistics need at least one service")]
    NoServices,
    #[error("judge reply holds no score between 1 and 5: {raw:?}")]
    JudgeParse { raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DependencyKind {
    Internal,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependency {
    pub service: String,
    pub kind: DependencyKind,
    /// A service name for internal dependencies, a URL for external ones.
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyManifest {
    pub app: String,
    pub dependencies: Vec<Dependency>,
}

impl DependencyManifest {
    /// Distinct (kind, target) pairs per service; repeated entries collapse.
    pub fn per_service(&self) -> BTreeMap<String, BTreeSet<(DependencyKind, String)>> {
        let mut out: BTreeMap<String, BTreeSet<(DependencyKind, String)>> = BTreeMap::new();
        for d in &self.dependencies {
            out.entry(d.service.clone())
                .or_default()
                .insert((d.kind, normalize_target(d.kind, &d.target)));
        }
        out
    }
}

fn normalize_target(kind: DependencyKind, target: &str) -> String {
    match kind {
        DependencyKind::Internal => target.to_string(),
        DependencyKind::External => url::Url::parse(target)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_else(|| target.to_string()),
    }
}

/// Whitespace-delimited token count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependencyCount {
    /// Every declared service, including those with no dependencies.
    pub per_service: BTreeMap<String, usize>,
    pub total: usize,
    /// Disagreements between the manifest and a source scan.
    pub warnings: Vec<String>,
}

/// Counts dependencies from the manifest and, when sources are given,
/// cross-checks them against outbound URLs found in those sources. The
/// manifest wins; disagreements become warnings.
pub fn dependency_count(
    spec: &AppSpec,
    manifest: &DependencyManifest,
    gt_sources: Option<&BTreeMap<String, String>>,
) -> Result<DependencyCount, ComplexityError> {
    let declared = manifest.per_service();
    for (service, deps) in &declared {
        if spec.service(service).is_none() {
            return Err(ComplexityError::UndeclaredService(service.clone()));
        }
        for (kind, target) in deps {
            if *kind == DependencyKind::Internal && spec.service(target).is_none() {
                return Err(ComplexityError::UndeclaredTarget {
                    service: service.clone(),
                    target: target.clone(),
                });
            }
        }
    }

    let per_service: BTreeMap<String, usize> = spec
        .services
        .iter()
        .map(|s| (s.name.clone(), declared.get(&s.name).map_or(0, BTreeSet::len)))
        .collect();
    let total = per_service.values().sum();

    let mut warnings = Vec::new();
    if let Some(sources) = gt_sources {
        for (service, source) in sources {
            let found = scan_outbound_calls(source, spec, service);
            let empty = BTreeSet::new();
            let expected = declared.get(service).unwrap_or(&empty);
            for (kind, target) in expected.difference(&found) {
                warnings.push(format!(
                    "{service}: manifest declares {kind:?} dependency on {target} but no call was found in the source"
                ));
            }
            for (kind, target) in found.difference(expected) {
                warnings.push(format!(
                    "{service}: source calls {kind:?} {target} which the manifest does not declare"
                ));
            }
        }
    }

    Ok(DependencyCount {
        per_service,
        total,
        warnings,
    })
}

static URL_LITERAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"https?://[A-Za-z0-9._-]+(?::\d+)?[^\s"'<>)`]*"#).unwrap());

/// Outbound endpoints named by URL literals in a source file. Hosts that
/// name a declared service are internal dependencies; loopback, the
/// datastore and the service itself are ignored.
pub fn scan_outbound_calls(
    source: &str,
    spec: &AppSpec,
    self_service: &str,
) -> BTreeSet<(DependencyKind, String)> {
    let mut out = BTreeSet::new();
    for m in URL_LITERAL.find_iter(source) {
        let Ok(u) = url::Url::parse(m.as_str()) else {
            continue;
        };
        let Some(host) = u.host_str() else { continue };
        if matches!(host, "localhost" | "127.0.0.1" | "0.0.0.0" | "mongo") {
            continue;
        }
        match spec.service_for_host(host) {
            Some(s) if s.name == self_service => {}
            Some(s) => {
                out.insert((DependencyKind::Internal, s.name.clone()));
            }
            None => {
                out.insert((DependencyKind::External, host.to_string()));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PackageStats {
    pub per_service: BTreeMap<String, usize>,
    pub mean: f64,
}

/// Mean number of distinct non-standard packages imported per service.
pub fn package_stats(
    scans: &BTreeMap<String, String>,
    profile: &GenerationProfile,
) -> Result<PackageStats, ComplexityError> {
    if scans.is_empty() {
        return Err(ComplexityError::NoServices);
    }
    let per_service: BTreeMap<String, usize> = scans
        .iter()
        .map(|(s, src)| (s.clone(), third_party_modules(src, profile).len()))
        .collect();
    let mean = per_service.values().sum::<usize>() as f64 / per_service.len() as f64;
    Ok(PackageStats { per_service, mean })
}

static OUT_OF_FIVE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(\d+)\s*(?:out of|/)\s*5\b").unwrap());
static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

/// Score from a judge reply: an explicit "N out of 5" (or "N/5") wins,
/// otherwise the first integer in 1..=5.
pub fn parse_judge_score(reply: &str) -> Result<u8, ComplexityError> {
    let in_range = |s: &str| s.parse::<u32>().ok().filter(|n| (1..=5).contains(n));
    if let Some(n) = OUT_OF_FIVE
        .captures_iter(reply)
        .find_map(|c| in_range(&c[1]))
    {
        return Ok(n as u8);
    }
    INTEGER
        .find_iter(reply)
        .find_map(|m| in_range(m.as_str()))
        .map(|n| n as u8)
        .ok_or_else(|| ComplexityError::JudgeParse {
            raw: reply.to_string(),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeVerdict {
    pub score: u8,
    pub rationale: String,
}

/// Asks a model to rate the difficulty of implementing a spec.
pub async fn llm_difficulty(
    spec_text: &str,
    gateway: &dyn Gateway,
    transcripts: &TranscriptStore,
    model_id: &str,
) -> Result<JudgeVerdict, ComplexityError> {
    let prompt = prompt_forge::build_judge_prompt(spec_text);
    let request = prompt_forge::CompletionRequest::new(model_id, None, prompt);
    let exchange = prompt_forge::complete(gateway, transcripts, &request, &Default::default()).await?;
    let score = parse_judge_score(&exchange.reply)?;
    Ok(JudgeVerdict {
        score,
        rationale: exchange.reply,
    })
}

/// Size, dependency and package figures of a corpus application. The
/// difficulty score is left empty; see [`llm_difficulty`].
pub fn measure(corpus: &Corpus, app: &str, profile: &GenerationProfile) -> Result<ComplexityReport, ComplexityError> {
    let spec = corpus.load_spec(app)?;
    let manifest = corpus.load_manifest(app)?;
    let scans = corpus.gt_import_scans(app, &spec)?;
    let gt = (app == "library").then(crate::reference_services::gt_sources);
    let deps = dependency_count(&spec, &manifest, gt.as_ref())?;
    let packages = package_stats(&scans, profile)?;
    Ok(ComplexityReport {
        app: app.to_string(),
        size_words: word_count(&render_prompt_text(&spec)),
        dependency_total: deps.total,
        per_service_dependencies: deps.per_service,
        avg_packages_per_service: packages.mean,
        judge_score: None,
        judge_rationale: None,
        reconstructed: spec.is_reconstructed(),
        warnings: deps.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub app: String,
    pub size_words: usize,
    pub dependency_total: usize,
    pub per_service_dependencies: BTreeMap<String, usize>,
    pub avg_packages_per_service: f64,
    pub judge_score: Option<u8>,
    pub judge_rationale: Option<String>,
    /// The spec text is a reconstruction, so the size is approximate.
    pub reconstructed: bool,
    pub warnings: Vec<String>,
}

impl ComplexityReport {
    /// One-row table with the columns name, size, dependencies, average
    /// packages and difficulty.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| Name | Description size (words) | # Dependencies | Avg # Packages per MS | LLM assigned difficulty |\n");
        out.push_str("|---|---|---|---|---|\n");
        let size = if self.reconstructed {
            format!("{}*", self.size_words)
        } else {
            self.size_words.to_string()
        };
        let judge = self
            .judge_score
            .map_or_else(|| "—".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.1} | {} |",
            capitalize(&self.app),
            size,
            self.dependency_total,
            self.avg_packages_per_service,
            judge
        );
        if self.reconstructed {
            out.push_str("\n\\* size measured on a reconstructed spec text\n");
        }
        if !self.per_service_dependencies.is_empty() {
            out.push_str("\nDependencies per service: ");
            let parts: Vec<String> = self
                .per_service_dependencies
                .iter()
                .map(|(s, n)| format!("{s} {n}"))
                .collect();
            out.push_str(&parts.join(", "));
            out.push('\n');
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}
