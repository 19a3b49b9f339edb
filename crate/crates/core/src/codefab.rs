//! From a raw model reply to a buildable service directory.
//!
//! The install list is derived from the import statements of the extracted
//! source, never from what the model claims in comments: standard modules
//! are dropped, known import/package name mismatches are remapped
//! (`jwt` installs as `PyJWT`), and the result is deduplicated in
//! first-seen order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CodefabError {
    #[error("no code extracted from reply")]
    NoCode,
    #[error("profile {path}: {message}")]
    Profile { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} cannot exist without its predecessor")]
    Orphan(Version),
}

/// Generation number of an artifact: V0 is the first reply, V1 the
/// post-reflection regeneration, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Version(pub u32);

impl Version {
    pub const V0: Version = Version(0);
    pub const V1: Version = Version(1);

    pub fn next(self) -> Version {
        Version(self.0 + 1)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.0)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    language: String,
    source_file: String,
    dependency_file: String,
    standard_modules: String,
    recipe_template: String,
    guidelines: String,
    one_shot_example: String,
    #[serde(default)]
    launch: Vec<String>,
    #[serde(default)]
    install: Vec<String>,
    #[serde(default)]
    env: BTreeMap<String, String>,
    #[serde(default)]
    remap: BTreeMap<String, String>,
}

/// Language-specific knowledge needed to turn source into a container.
#[derive(Debug, Clone)]
pub struct GenerationProfile {
    pub name: String,
    pub language: String,
    pub source_file: String,
    pub dependency_file: String,
    pub standard_modules: BTreeSet<String>,
    pub remap: BTreeMap<String, String>,
    pub recipe_template: String,
    pub guidelines: String,
    pub one_shot_example: String,
    /// Command the local runtime runs inside the build directory.
    pub launch: Vec<String>,
    /// Command installing the dependency file locally; empty to skip.
    pub install: Vec<String>,
    /// Extra environment for the launched service.
    pub env: BTreeMap<String, String>,
}

impl GenerationProfile {
    pub fn load(dir: &Path) -> Result<Self, CodefabError> {
        let manifest = dir.join("profile.toml");
        let text = read(&manifest)?;
        let file: ProfileFile = toml::from_str(&text).map_err(|e| CodefabError::Profile {
            path: manifest.clone(),
            message: e.to_string(),
        })?;
        let standard_modules = read(&dir.join(&file.standard_modules))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        let profile = GenerationProfile {
            name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            language: file.language,
            source_file: file.source_file,
            dependency_file: file.dependency_file,
            standard_modules,
            remap: file.remap,
            recipe_template: read(&dir.join(&file.recipe_template))?,
            guidelines: read(&dir.join(&file.guidelines))?,
            one_shot_example: read(&dir.join(&file.one_shot_example))?,
            launch: file.launch,
            install: file.install,
            env: file.env,
        };
        let clashes: Vec<&String> = profile
            .remap
            .keys()
            .filter(|k| profile.standard_modules.contains(*k))
            .collect();
        if !clashes.is_empty() {
            return Err(CodefabError::Profile {
                path: manifest,
                message: format!("remap keys are standard modules: {clashes:?}"),
            });
        }
        Ok(profile)
    }
}

fn read(path: &Path) -> Result<String, CodefabError> {
    std::fs::read_to_string(path).map_err(|source| CodefabError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Extracted source plus what the heuristics had to do to get it.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub source: String,
    pub notes: Vec<String>,
}

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*```").unwrap());

/// Pulls source code out of a model reply.
///
/// Fenced blocks win and are concatenated in order. Without fences the
/// whole reply is taken, minus leading and trailing lines that read as
/// prose. Stray prose in the middle of the code is left alone.
pub fn extract_source(raw_reply: &str) -> Result<Extraction, CodefabError> {
    let mut notes = Vec::new();
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    let mut named_files = 0;
    for line in raw_reply.lines() {
        if FENCE.is_match(line) {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => {
                    let info = line.trim().trim_start_matches('`').trim();
                    if info.split_whitespace().nth(1).is_some() || info.contains('.') {
                        named_files += 1;
                    }
                    current = Some(Vec::new());
                }
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    if let Some(lines) = current {
        notes.push("unterminated code fence".to_string());
        blocks.push(lines.join("\n"));
    }
    if named_files > 1 {
        notes.push(format!("{named_files} fenced blocks carry file names; treated as one file"));
        tracing::warn!(named_files, "multi-file reply concatenated into a single source");
    }

    let source = if blocks.is_empty() {
        let lines: Vec<&str> = raw_reply.lines().collect();
        let first = lines.iter().position(|l| !l.trim().is_empty() && !is_prose(l));
        let last = lines.iter().rposition(|l| !l.trim().is_empty() && !is_prose(l));
        match (first, last) {
            (Some(a), Some(b)) => {
                let leading = lines[..a].iter().filter(|l| !l.trim().is_empty()).count();
                let trailing = lines[b + 1..].iter().filter(|l| !l.trim().is_empty()).count();
                if leading + trailing > 0 {
                    notes.push(format!(
                        "dropped {leading} leading and {trailing} trailing prose line(s)"
                    ));
                    tracing::info!(leading, trailing, "stripped prose around unfenced reply");
                }
                lines[a..=b].join("\n")
            }
            _ => String::new(),
        }
    } else {
        blocks.join("\n\n")
    };

    if source.trim().is_empty() {
        return Err(CodefabError::NoCode);
    }
    let mut source = source;
    if !source.ends_with('\n') {
        source.push('\n');
    }
    Ok(Extraction { source, notes })
}

/// A line that looks like an English sentence rather than code or a comment.
fn is_prose(line: &str) -> bool {
    let t = line.trim();
    if t.starts_with('#') || line.starts_with([' ', '\t']) {
        return false;
    }
    let code_marks = ['=', '(', ')', '[', ']', '{', '}', '@', '"', '\''];
    if t.chars().any(|c| code_marks.contains(&c)) {
        return false;
    }
    let first = t.split_whitespace().next().unwrap_or("");
    const KEYWORDS: [&str; 12] = [
        "import", "from", "def", "class", "if", "for", "while", "return", "try", "except", "with", "app",
    ];
    if KEYWORDS.contains(&first) {
        return false;
    }
    t.split_whitespace().count() >= 3 && first.chars().next().is_some_and(char::is_alphabetic)
}

static IMPORT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*import\s+(.+)$").unwrap());
static FROM_IMPORT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*from\s+([A-Za-z_.][\w.]*)\s+import\b").unwrap());

/// Top-level module names of every import statement, first-seen order,
/// without duplicates. Relative imports are skipped.
pub fn scan_imports(source: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut push = |name: &str| {
        let top = name.split('.').next().unwrap_or("").trim();
        if !top.is_empty() && top.chars().all(|c| c.is_alphanumeric() || c == '_') && seen.insert(top.to_string()) {
            out.push(top.to_string());
        }
    };
    for line in source.lines() {
        let line = line.split('#').next().unwrap_or("");
        if let Some(c) = FROM_IMPORT.captures(line) {
            let module = &c[1];
            if !module.starts_with('.') {
                push(module);
            }
        } else if let Some(c) = IMPORT.captures(line) {
            for part in c[1].split(',') {
                let name = part.split_whitespace().next().unwrap_or("");
                push(name);
            }
        }
    }
    out
}

/// Packages to install for a source file under a profile.
pub fn derive_dependencies(source: &str, profile: &GenerationProfile) -> Vec<String> {
    let mut seen = HashSet::new();
    scan_imports(source)
        .into_iter()
        .filter(|m| !profile.standard_modules.contains(m))
        .map(|m| profile.remap.get(&m).cloned().unwrap_or(m))
        .filter(|p| seen.insert(p.clone()))
        .collect()
}

/// Distinct non-standard modules a source imports (no remapping).
pub fn third_party_modules(source: &str, profile: &GenerationProfile) -> Vec<String> {
    scan_imports(source)
        .into_iter()
        .filter(|m| !profile.standard_modules.contains(m))
        .collect()
}

/// One generated service implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedArtifact {
    pub run_id: String,
    pub service_name: String,
    pub version: Version,
    pub raw_reply: String,
    pub source: String,
    pub declared_modules: BTreeSet<String>,
    pub install_list: Vec<String>,
    #[serde(default)]
    pub build_dir: Option<PathBuf>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl GeneratedArtifact {
    fn from_reply(
        run_id: &str,
        service_name: &str,
        version: Version,
        raw_reply: &str,
        profile: &GenerationProfile,
    ) -> Result<Self, CodefabError> {
        let Extraction { source, notes } = extract_source(raw_reply)?;
        Ok(Self {
            run_id: run_id.to_string(),
            service_name: service_name.to_string(),
            version,
            raw_reply: raw_reply.to_string(),
            declared_modules: scan_imports(&source).into_iter().collect(),
            install_list: derive_dependencies(&source, profile),
            source,
            build_dir: None,
            notes,
        })
    }

    pub fn initial(
        run_id: &str,
        service_name: &str,
        raw_reply: &str,
        profile: &GenerationProfile,
    ) -> Result<Self, CodefabError> {
        Self::from_reply(run_id, service_name, Version::V0, raw_reply, profile)
    }

    /// The next version of this artifact, built from a regeneration reply.
    pub fn regenerate(&self, raw_reply: &str, profile: &GenerationProfile) -> Result<Self, CodefabError> {
        Self::from_reply(&self.run_id, &self.service_name, self.version.next(), raw_reply, profile)
    }
}

/// Writes the source, the dependency file (one package per line) and the
/// container recipe into `dir`, replacing whatever was there.
pub fn materialize_build(
    artifact: &mut GeneratedArtifact,
    profile: &GenerationProfile,
    port: u16,
    dir: &Path,
) -> Result<PathBuf, CodefabError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CodefabError::Io { path, source }
    };
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::create_dir_all(dir).map_err(io(dir))?;

    let src = dir.join(&profile.source_file);
    std::fs::write(&src, &artifact.source).map_err(io(&src))?;

    let deps = dir.join(&profile.dependency_file);
    let body: String = artifact.install_list.iter().map(|p| format!("{p}\n")).collect();
    std::fs::write(&deps, body).map_err(io(&deps))?;

    let recipe = profile
        .recipe_template
        .replace("{{source_file}}", &profile.source_file)
        .replace("{{dependency_file}}", &profile.dependency_file)
        .replace("{{port}}", &port.to_string());
    let dockerfile = dir.join("Dockerfile");
    std::fs::write(&dockerfile, recipe).map_err(io(&dockerfile))?;

    artifact.build_dir = Some(dir.to_path_buf());
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> GenerationProfile {
        crate::Corpus::bundled().profile("python-flask").unwrap()
    }

    #[test]
    fn single_fence() {
        let e = extract_source("```python\nimport os\nprint(1)\n```").unwrap();
        assert_eq!(e.source, "import os\nprint(1)\n");
    }

    #[test]
    fn prose_around_fence_is_dropped() {
        let reply = "Here is the code:\n```python\nimport flask\n```\nHope this helps.";
        assert_eq!(extract_source(reply).unwrap().source, "import flask\n");
    }

    #[test]
    fn fences_concatenate_in_order() {
        let reply = "```\na = 1\n```\ntext\n```\nb = 2\n```";
        assert_eq!(extract_source(reply).unwrap().source, "a = 1\n\nb = 2\n");
    }

    #[test]
    fn unfenced_reply_loses_prose_edges_only() {
        let reply = "Sure, here is the service you asked for\nimport os\nThis line is stray prose in the middle\nx = 1\nLet me know if you need more";
        let e = extract_source(reply).unwrap();
        assert_eq!(e.source, "import os\nThis line is stray prose in the middle\nx = 1\n");
        assert_eq!(e.notes.len(), 1);
    }

    #[test]
    fn empty_reply_has_no_code() {
        assert!(matches!(extract_source("  \n"), Err(CodefabError::NoCode)));
        assert!(matches!(extract_source("```\n```"), Err(CodefabError::NoCode)));
    }

    #[test]
    fn scans_plain_and_from_imports() {
        let src = "import os, sys as system\nfrom flask import Flask\nfrom .local import x\nimport a.b.c\n    import json  # inside a function\n";
        assert_eq!(scan_imports(src), vec!["os", "sys", "flask", "a", "json"]);
    }

    #[test]
    fn standard_modules_are_dropped() {
        let src = "import flask\nimport pymongo\nimport uuid\nimport json\n";
        assert_eq!(derive_dependencies(src, &profile()), vec!["flask", "pymongo"]);
    }

    #[test]
    fn jwt_installs_as_pyjwt() {
        assert_eq!(derive_dependencies("import jwt\n", &profile()), vec!["PyJWT"]);
    }

    #[test]
    fn no_imports_no_dependencies() {
        assert!(derive_dependencies("print('hi')\n", &profile()).is_empty());
    }

    #[test]
    fn remap_collapses_duplicates() {
        let src = "import pymongo\nfrom bson import ObjectId\n";
        assert_eq!(derive_dependencies(src, &profile()), vec!["pymongo"]);
    }

    #[test]
    fn v1_follows_v0() {
        let p = profile();
        let v0 = GeneratedArtifact::initial("r1", "Logs", "import flask\n", &p).unwrap();
        let v1 = v0.regenerate("import pymongo\n", &p).unwrap();
        assert_eq!(v0.version, Version::V0);
        assert_eq!(v1.version, Version::V1);
        assert_eq!(v1.run_id, "r1");
        assert_eq!(v1.version.to_string(), "V1");
    }

    #[test]
    fn materialize_writes_three_files_deterministically() {
        let p = profile();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("build");
        let mut a = GeneratedArtifact::initial("r1", "Logs", "import flask\nimport pymongo\n", &p).unwrap();
        materialize_build(&mut a, &p, 5004, &dir).unwrap();
        let deps = std::fs::read_to_string(dir.join("requirements.txt")).unwrap();
        assert_eq!(deps, "flask\npymongo\n");
        let snapshot = |d: &Path| -> Vec<(String, Vec<u8>)> {
            let mut v: Vec<_> = std::fs::read_dir(d)
                .unwrap()
                .map(|e| e.unwrap())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
                .collect();
            v.sort();
            v
        };
        let first = snapshot(&dir);
        std::fs::write(dir.join("junk"), "x").unwrap();
        materialize_build(&mut a, &p, 5004, &dir).unwrap();
        assert_eq!(first, snapshot(&dir));
        assert_eq!(first.len(), 3);
        let recipe = String::from_utf8(first[0].1.clone()).unwrap();
        assert!(recipe.contains("EXPOSE 5004"));
    }

    #[test]
    fn empty_install_list_gives_empty_file() {
        let p = profile();
        let tmp = tempfile::tempdir().unwrap();
        let mut a = GeneratedArtifact::initial("r1", "Logs", "import os\n", &p).unwrap();
        let dir = materialize_build(&mut a, &p, 5004, tmp.path()).unwrap();
        assert_eq!(std::fs::read_to_string(dir.join("requirements.txt")).unwrap(), "");
    }
}
