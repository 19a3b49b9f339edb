use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One model call as persisted in a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub transcript_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub model_id: String,
    pub temperature: Option<f64>,
    pub prompt: String,
    pub reply: String,
    pub latency_ms: u64,
}

impl LlmExchange {
    pub fn new(
        tag: Option<String>,
        model_id: &str,
        temperature: Option<f64>,
        prompt: &str,
        reply: &str,
        latency_ms: u64,
    ) -> Self {
        let mut h = Sha256::new();
        for part in [
            tag.as_deref().unwrap_or(""),
            model_id,
            &temperature_key(temperature),
            prompt,
            reply,
        ] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        let transcript_id = hex::encode(h.finalize())[..16].to_string();
        Self {
            transcript_id,
            tag,
            model_id: model_id.to_string(),
            temperature,
            prompt: prompt.to_string(),
            reply: reply.to_string(),
            latency_ms,
        }
    }

    /// Lookup key used by replay: the request without its reply.
    pub fn key(&self) -> String {
        exchange_key(&self.model_id, self.temperature, &self.prompt)
    }
}

fn temperature_key(t: Option<f64>) -> String {
    t.map_or_else(|| "default".to_string(), |t| format!("{t:.3}"))
}

/// Hex sha256 over model, temperature and prompt.
pub fn exchange_key(model_id: &str, temperature: Option<f64>, prompt: &str) -> String {
    let mut h = Sha256::new();
    for part in [model_id, &temperature_key(temperature), prompt] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Append-only JSONL transcript file. Appends from concurrent callers
/// are serialized.
#[derive(Debug)]
pub struct TranscriptStore {
    path: PathBuf,
    lock: Mutex<()>,
}

impl TranscriptStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, exchange: &LlmExchange) -> std::io::Result<()> {
        let line = serde_json::to_string(exchange).map_err(std::io::Error::other)?;
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(f, "{line}")?;
        f.sync_data()
    }

    pub fn read(path: &Path) -> std::io::Result<Vec<LlmExchange>> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_stable_and_distinct() {
        let a = LlmExchange::new(None, "m", Some(0.3), "p", "r", 0);
        let b = LlmExchange::new(None, "m", Some(0.3), "p", "r", 12);
        let c = LlmExchange::new(None, "m", Some(0.5), "p", "r", 0);
        assert_eq!(a.transcript_id, b.transcript_id);
        assert_ne!(a.transcript_id, c.transcript_id);
        assert_eq!(a.transcript_id.len(), 16);
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::new(dir.path().join("x/transcripts.jsonl"));
        let e = LlmExchange::new(Some("t".into()), "m", Some(0.3), "p", "r", 0);
        store.append(&e).unwrap();
        store.append(&e).unwrap();
        let back = TranscriptStore::read(store.path()).unwrap();
        assert_eq!(back, vec![e.clone(), e]);
        assert_eq!(back[0].temperature, Some(0.3));
    }
}
