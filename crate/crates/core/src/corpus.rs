//! Locating and loading the bundled applications and generation profiles.
//!
//! Layout under the repository root:
//!
//! ```text
//! corpus/<app>/spec.json
//! corpus/<app>/dependencies.json
//! corpus/<app>/gt_imports/<service>.py
//! corpus/<app>/tests/<service>.json
//! corpus/<app>/fixtures/<service>.json
//! corpus/<app>/recordings/*.jsonl
//! profiles/<profile>/profile.toml
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::codefab::{CodefabError, GenerationProfile};
use crate::complexity::DependencyManifest;
use crate::probe::{Fixture, Suite};
use crate::spec_model::{self, AppSpec, SpecError};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Profile(#[from] CodefabError),
    #[error("application `{0}` not found in corpus")]
    UnknownApp(String),
}

#[derive(Debug, Clone)]
pub struct Corpus {
    root: PathBuf,
}

impl Corpus {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// The corpus shipped with this repository.
    pub fn bundled() -> Self {
        Self::new(Path::new(env!("CARGO_MANIFEST_DIR")).join("../.."))
    }

    /// `$MSBA_ROOT`, else the nearest ancestor of the working directory
    /// holding a `corpus/` directory, else the bundled corpus.
    pub fn discover() -> Self {
        if let Ok(root) = std::env::var("MSBA_ROOT") {
            return Self::new(root);
        }
        if let Ok(cwd) = std::env::current_dir() {
            for dir in cwd.ancestors() {
                if dir.join("corpus").is_dir() {
                    return Self::new(dir);
                }
            }
        }
        Self::bundled()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn app_dir(&self, app: &str) -> PathBuf {
        self.root.join("corpus").join(app)
    }

    pub fn apps(&self) -> Vec<String> {
        let mut apps: Vec<String> = std::fs::read_dir(self.root.join("corpus"))
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().join("spec.json").is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        apps.sort();
        apps
    }

    pub fn load_spec(&self, app: &str) -> Result<AppSpec, CorpusError> {
        let path = self.app_dir(app).join("spec.json");
        if !path.is_file() {
            return Err(CorpusError::UnknownApp(app.to_string()));
        }
        Ok(spec_model::load_spec(&path)?)
    }

    pub fn load_manifest(&self, app: &str) -> Result<DependencyManifest, CorpusError> {
        read_json(&self.app_dir(app).join("dependencies.json"))
    }

    /// Import blocks of the reference implementations, keyed by service.
    pub fn gt_import_scans(&self, app: &str, spec: &AppSpec) -> Result<BTreeMap<String, String>, CorpusError> {
        let dir = self.app_dir(app).join("gt_imports");
        let mut out = BTreeMap::new();
        for s in &spec.services {
            let path = dir.join(format!("{}.py", file_stem(&s.name)));
            let text = std::fs::read_to_string(&path).map_err(|source| CorpusError::Io { path, source })?;
            out.insert(s.name.clone(), text);
        }
        Ok(out)
    }

    pub fn suite_path(&self, app: &str, service: &str) -> PathBuf {
        self.app_dir(app)
            .join("tests")
            .join(format!("{}.json", file_stem(service)))
    }

    pub fn fixture_path(&self, app: &str, service: &str) -> PathBuf {
        self.app_dir(app)
            .join("fixtures")
            .join(format!("{}.json", file_stem(service)))
    }

    pub fn load_suite(&self, app: &str, service: &str) -> Result<Suite, CorpusError> {
        read_json(&self.suite_path(app, service))
    }

    pub fn load_fixture(&self, app: &str, service: &str) -> Result<Fixture, CorpusError> {
        read_json(&self.fixture_path(app, service))
    }

    pub fn recordings_dir(&self, app: &str) -> PathBuf {
        self.app_dir(app).join("recordings")
    }

    pub fn profile(&self, name: &str) -> Result<GenerationProfile, CorpusError> {
        Ok(GenerationProfile::load(&self.root.join("profiles").join(name))?)
    }

    /// Offline stand-in data for the Books metadata lookup.
    pub fn books_lookup_path(&self) -> PathBuf {
        self.app_dir("library").join("books_lookup.json")
    }
}

pub fn file_stem(service: &str) -> String {
    service.to_ascii_lowercase().replace(' ', "_")
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CorpusError::Json {
        path: path.to_path_buf(),
        source,
    })
}
