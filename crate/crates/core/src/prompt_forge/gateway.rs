use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::transcript::{exchange_key, LlmExchange, TranscriptStore};

const TRANSCRIPT_SUFFIX: &str = "transcripts.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("prompt exceeds the model context window: {0}")]
    ContextLength(String),
    #[error("endpoint answered {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("no recording for key {key}")]
    NoRecording { key: String },
    #[error("no stub rule matches prompt {hash}")]
    NoStubRule { hash: String },
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("transcript i/o: {0}")]
    Transcript(#[from] std::io::Error),
}

impl GatewayError {
    fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_id: String,
    /// `None` leaves the temperature to the provider.
    pub temperature: Option<f64>,
    pub prompt: String,
    /// Free-form call site label, e.g. `<run-id>/V0`. Replay uses it to
    /// tell apart repeated identical prompts.
    pub tag: Option<String>,
}

impl CompletionRequest {
    pub fn new(model_id: &str, temperature: Option<f64>, prompt: String) -> Self {
        Self {
            model_id: model_id.to_string(),
            temperature,
            prompt,
            tag: None,
        }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayReply {
    pub text: String,
    pub latency: Duration,
}

#[async_trait]
pub trait Gateway: Send + Sync {
    async fn send(&self, request: &CompletionRequest) -> Result<GatewayReply, GatewayError>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Sends `request`, retrying transport failures with exponential
/// backoff, and appends the exchange to `transcripts` before returning it.
pub async fn complete(
    gateway: &dyn Gateway,
    transcripts: &TranscriptStore,
    request: &CompletionRequest,
    policy: &RetryPolicy,
) -> Result<LlmExchange, GatewayError> {
    let attempts = policy.attempts.max(1);
    let mut attempt = 0;
    let reply = loop {
        attempt += 1;
        match gateway.send(request).await {
            Ok(r) => break r,
            Err(e) if e.is_retryable() && attempt < attempts => {
                let delay = policy.base_delay * 2u32.pow(attempt - 1);
                tracing::warn!(attempt, ?delay, error = %e, "retrying model call");
                tokio::time::sleep(delay).await;
            }
            Err(e) => return Err(e),
        }
    };
    let exchange = LlmExchange::new(
        request.tag.clone(),
        &request.model_id,
        request.temperature,
        &request.prompt,
        &reply.text,
        reply.latency.as_millis() as u64,
    );
    transcripts.append(&exchange)?;
    Ok(exchange)
}

/// Chat-completions endpoint reached over HTTP. The whole prompt goes out
/// as a single user message.
pub struct LiveGateway {
    client: reqwest::Client,
    endpoint: String,
    api_key: String,
}

impl LiveGateway {
    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.to_string(),
            api_key,
        })
    }

    pub fn from_env(endpoint: &str, api_key_env: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let key = std::env::var(api_key_env)
            .map_err(|_| GatewayError::Config(format!("environment variable {api_key_env} is not set")))?;
        Self::new(endpoint, key, timeout)
    }
}

#[async_trait]
impl Gateway for LiveGateway {
    async fn send(&self, request: &CompletionRequest) -> Result<GatewayReply, GatewayError> {
        let mut body = serde_json::json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        if let Some(t) = request.temperature {
            body["temperature"] = serde_json::json!(t);
        }
        let started = Instant::now();
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            let lower = text.to_ascii_lowercase();
            if lower.contains("context_length") || lower.contains("maximum context length") {
                return Err(GatewayError::ContextLength(text));
            }
            if status.as_u16() == 429 || status.is_server_error() {
                return Err(GatewayError::Transport(format!("{status}: {text}")));
            }
            return Err(GatewayError::Rejected {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| GatewayError::Transport(e.to_string()))?;
        let content = parsed
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| GatewayError::Transport("response holds no message content".into()))?;
        Ok(GatewayReply {
            text: content.to_string(),
            latency: started.elapsed(),
        })
    }
}

struct Recording {
    tag: Option<String>,
    reply: String,
}

/// Serves replies recorded in transcript files. A request whose tag
/// matches a recording gets that reply; otherwise recordings with the
/// same key are handed out in file order.
pub struct ReplayGateway {
    recordings: Mutex<HashMap<String, VecDeque<Recording>>>,
}

impl ReplayGateway {
    pub fn from_exchanges(exchanges: impl IntoIterator<Item = LlmExchange>) -> Self {
        let mut map: HashMap<String, VecDeque<Recording>> = HashMap::new();
        for e in exchanges {
            map.entry(e.key()).or_default().push_back(Recording {
                tag: e.tag,
                reply: e.reply,
            });
        }
        Self {
            recordings: Mutex::new(map),
        }
    }

    /// Loads the given transcript files, and every file named
    /// `*transcripts.jsonl` under the given directories.
    pub fn load(paths: &[PathBuf]) -> Result<Self, GatewayError> {
        let mut exchanges = Vec::new();
        for path in paths {
            for file in transcript_files(path)? {
                let read = TranscriptStore::read(&file)
                    .map_err(|e| GatewayError::Config(format!("{}: {e}", file.display())))?;
                exchanges.extend(read);
            }
        }
        Ok(Self::from_exchanges(exchanges))
    }
}

fn transcript_files(path: &Path) -> std::io::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            out.extend(transcript_files(&e.path())?.into_iter().filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(TRANSCRIPT_SUFFIX))
            }));
        }
    }
    Ok(out)
}

#[async_trait]
impl Gateway for ReplayGateway {
    async fn send(&self, request: &CompletionRequest) -> Result<GatewayReply, GatewayError> {
        let key = exchange_key(&request.model_id, request.temperature, &request.prompt);
        let mut map = self.recordings.lock().unwrap_or_else(|e| e.into_inner());
        let queue = map
            .get_mut(&key)
            .filter(|q| !q.is_empty())
            .ok_or_else(|| GatewayError::NoRecording { key: key.clone() })?;
        let idx = request
            .tag
            .as_ref()
            .and_then(|t| queue.iter().position(|r| r.tag.as_ref() == Some(t)))
            .unwrap_or(0);
        let rec = queue.remove(idx).expect("index within queue");
        Ok(GatewayReply {
            text: rec.reply,
            latency: Duration::ZERO,
        })
    }
}

/// One canned reply. A rule matches on the prompt's sha256 or on a
/// substring of the prompt.
#[derive(Debug, Clone, Deserialize)]
pub struct StubRule {
    #[serde(default)]
    pub prompt_sha256: Option<String>,
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub reply: Option<String>,
    /// Path of a file holding the reply, relative to the rules file.
    #[serde(default)]
    pub reply_file: Option<PathBuf>,
}

/// Deterministic canned replies; the first matching rule wins.
pub struct StubGateway {
    rules: Vec<(StubRule, String)>,
}

impl StubGateway {
    pub fn new() -> Self {
        Self { rules: Vec::new() }
    }

    pub fn when_contains(mut self, needle: &str, reply: impl Into<String>) -> Self {
        let rule = StubRule {
            prompt_sha256: None,
            contains: Some(needle.to_string()),
            reply: None,
            reply_file: None,
        };
        self.rules.push((rule, reply.into()));
        self
    }

    pub fn when_prompt(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        let rule = StubRule {
            prompt_sha256: Some(prompt_sha256(prompt)),
            contains: None,
            reply: None,
            reply_file: None,
        };
        self.rules.push((rule, reply.into()));
        self
    }

    /// Reads a JSON array of [`StubRule`]s.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        let rules: Vec<StubRule> =
            serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = Self::new();
        for rule in rules {
            let reply = match (&rule.reply, &rule.reply_file) {
                (Some(r), _) => r.clone(),
                (None, Some(f)) => std::fs::read_to_string(base.join(f))?,
                (None, None) => {
                    return Err(GatewayError::Config(format!(
                        "{}: rule without reply",
                        path.display()
                    )))
                }
            };
            out.rules.push((rule, reply));
        }
        Ok(out)
    }
}

impl Default for StubGateway {
    fn default() -> Self {
        Self::new()
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[async_trait]
impl Gateway for StubGateway {
    async fn send(&self, request: &CompletionRequest) -> Result<GatewayReply, GatewayError> {
        let hash = prompt_sha256(&request.prompt);
        self.rules
            .iter()
            .find(|(rule, _)| {
                rule.prompt_sha256.as_deref() == Some(hash.as_str())
                    || rule
                        .contains
                        .as_deref()
                        .is_some_and(|n| request.prompt.contains(n))
            })
            .map(|(_, reply)| GatewayReply {
                text: reply.clone(),
                latency: Duration::ZERO,
            })
            .ok_or(GatewayError::NoStubRule { hash })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn store() -> (tempfile::TempDir, TranscriptStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = TranscriptStore::new(dir.path().join("transcripts.jsonl"));
        (dir, s)
    }

    fn quick() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        }
    }

    #[tokio::test]
    async fn stub_by_hash_has_zero_latency_and_one_transcript() {
        let (_d, s) = store();
        let g = StubGateway::new().when_prompt("write code", "print(1)");
        let req = CompletionRequest::new("m", Some(0.0), "write code".into());
        let e = complete(&g, &s, &req, &quick()).await.unwrap();
        assert_eq!(e.reply, "print(1)");
        assert_eq!(e.latency_ms, 0);
        assert_eq!(TranscriptStore::read(s.path()).unwrap(), vec![e]);
    }

    #[tokio::test]
    async fn replay_missing_key() {
        let (_d, s) = store();
        let g = ReplayGateway::from_exchanges([]);
        let req = CompletionRequest::new("m", Some(0.3), "p".into());
        assert!(matches!(
            complete(&g, &s, &req, &quick()).await,
            Err(GatewayError::NoRecording { .. })
        ));
        assert!(TranscriptStore::read(s.path()).unwrap().is_empty());
    }

    #[tokio::test]
    async fn replay_prefers_tag_then_order() {
        let rec = |tag: &str, reply: &str| LlmExchange::new(Some(tag.into()), "m", Some(0.3), "p", reply, 5);
        let g = ReplayGateway::from_exchanges([rec("a", "one"), rec("b", "two")]);
        let req = CompletionRequest::new("m", Some(0.3), "p".into());
        let r = g.send(&req.clone().tagged("b")).await.unwrap();
        assert_eq!(r.text, "two");
        assert_eq!(g.send(&req).await.unwrap().text, "one");
        assert!(g.send(&req).await.is_err());
    }

    struct Flaky {
        calls: AtomicU32,
        fail_first: u32,
        error: fn() -> GatewayError,
    }

    #[async_trait]
    impl Gateway for Flaky {
        async fn send(&self, _r: &CompletionRequest) -> Result<GatewayReply, GatewayError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err((self.error)())
            } else {
                Ok(GatewayReply {
                    text: "ok".into(),
                    latency: Duration::ZERO,
                })
            }
        }
    }

    #[tokio::test]
    async fn transport_failures_retry_three_times() {
        let (_d, s) = store();
        let req = CompletionRequest::new("m", None, "p".into());
        let g = Flaky {
            calls: AtomicU32::new(0),
            fail_first: 2,
            error: || GatewayError::Transport("reset".into()),
        };
        assert_eq!(complete(&g, &s, &req, &quick()).await.unwrap().reply, "ok");
        let g = Flaky {
            calls: AtomicU32::new(0),
            fail_first: 3,
            error: || GatewayError::Transport("reset".into()),
        };
        assert!(matches!(complete(&g, &s, &req, &quick()).await, Err(GatewayError::Transport(_))));
        assert_eq!(g.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn context_length_is_not_retried() {
        let (_d, s) = store();
        let req = CompletionRequest::new("m", None, "p".into());
        let g = Flaky {
            calls: AtomicU32::new(0),
            fail_first: 5,
            error: || GatewayError::ContextLength("too long".into()),
        };
        assert!(matches!(
            complete(&g, &s, &req, &quick()).await,
            Err(GatewayError::ContextLength(_))
        ));
        assert_eq!(g.calls.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn live_gateway_records_temperature() {
        use axum::{routing::post, Json, Router};
        let app = Router::new().route(
            "/v1/chat/completions",
            post(|Json(body): Json<serde_json::Value>| async move {
                assert_eq!(body["temperature"], 0.3);
                assert_eq!(body["messages"].as_array().unwrap().len(), 1);
                Json(serde_json::json!({"choices": [{"message": {"content": "hello"}}]}))
            }),
        );
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

        let g = LiveGateway::new(
            &format!("http://{addr}/v1/chat/completions"),
            "k".into(),
            Duration::from_secs(5),
        )
        .unwrap();
        let (_d, s) = store();
        let req = CompletionRequest::new("m", Some(0.3), "p".into());
        let e = complete(&g, &s, &req, &quick()).await.unwrap();
        assert_eq!(e.reply, "hello");
        assert_eq!(TranscriptStore::read(s.path()).unwrap()[0].temperature, Some(0.3));
    }

    #[tokio::test]
    async fn live_gateway_flags_context_overflow() {
        use axum::{http::StatusCode, routing::post, Router};
        let app = Router::new().route(
            "/c",
            post(|| async {
                (
                    StatusCode::BAD_REQUEST,
                    r#"{"error":{"code":"context_length_exceeded"}}"#,
                )
            }),
        );
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        let g = LiveGateway::new(&format!("http://{addr}/c"), "k".into(), Duration::from_secs(5)).unwrap();
        let req = CompletionRequest::new("m", None, "p".into());
        assert!(matches!(g.send(&req).await, Err(GatewayError::ContextLength(_))));
    }
}
