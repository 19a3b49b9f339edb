//! Ground-truth implementations of the library services.
//!
//! Each service owns an in-memory document store and talks to its peers
//! over HTTP only. Peer origins come from [`GtConfig::peers`]; a missing
//! entry falls back to the in-network URL of the deployment.

mod books;
mod borrows;
mod cardholders;
mod logs;
mod store;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use books::{BookLookup, BookMeta, GoogleBooksLookup, NoLookup, StaticLookup};
pub use store::{DocStore, Document};

/// Header that overrides the current date.
pub const TODAY_HEADER: &str = "x-today";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GtService {
    Cardholders,
    Books,
    Borrows,
    Logs,
}

impl GtService {
    pub const ALL: [GtService; 4] = [
        GtService::Cardholders,
        GtService::Books,
        GtService::Borrows,
        GtService::Logs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GtService::Cardholders => "Cardholders",
            GtService::Books => "Books",
            GtService::Borrows => "Borrows",
            GtService::Logs => "Logs",
        }
    }

    fn router(self, ctx: Arc<Ctx>) -> Router {
        match self {
            GtService::Cardholders => cardholders::router(ctx),
            GtService::Books => books::router(ctx),
            GtService::Borrows => borrows::router(ctx),
            GtService::Logs => logs::router(ctx),
        }
    }
}

impl FromStr for GtService {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GtService::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("no ground-truth implementation for `{s}`"))
    }
}

/// Tunables of the ground-truth services.
#[derive(Clone)]
pub struct GtConfig {
    /// Service name to origin, e.g. `Borrows -> http://127.0.0.1:40123`.
    pub peers: BTreeMap<String, String>,
    pub fine_per_day: f64,
    pub loan_days: i64,
    /// Overdue books at which a cardholder may no longer borrow.
    pub overdue_limit: usize,
    pub lookup: Arc<dyn BookLookup>,
    pub peer_timeout: Duration,
}

impl Default for GtConfig {
    fn default() -> Self {
        Self {
            peers: BTreeMap::new(),
            fine_per_day: 0.50,
            loan_days: 14,
            overdue_limit: 2,
            lookup: Arc::new(NoLookup),
            peer_timeout: Duration::from_secs(10),
        }
    }
}

impl std::fmt::Debug for GtConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GtConfig")
            .field("peers", &self.peers)
            .field("fine_per_day", &self.fine_per_day)
            .field("loan_days", &self.loan_days)
            .field("overdue_limit", &self.overdue_limit)
            .finish_non_exhaustive()
    }
}

struct Ctx {
    store: DocStore,
    config: GtConfig,
    client: reqwest::Client,
}

/// Builds the router of one service with a fresh store.
pub fn router(service: GtService, config: GtConfig) -> Router {
    let client = reqwest::Client::builder()
        .timeout(config.peer_timeout)
        .build()
        .expect("http client");
    service.router(Arc::new(Ctx {
        store: DocStore::new(),
        config,
        client,
    }))
}

/// A running service.
pub struct GtServer {
    pub service: GtService,
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl GtServer {
    pub fn origin(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if tokio::time::timeout(Duration::from_secs(2), &mut self.task)
            .await
            .is_err()
        {
            self.task.abort();
        }
    }
}

/// Serves `service` on an already bound listener.
pub fn spawn(service: GtService, listener: TcpListener, config: GtConfig) -> std::io::Result<GtServer> {
    let addr = listener.local_addr()?;
    let app = router(service, config);
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(GtServer {
        service,
        addr,
        shutdown: Some(tx),
        task,
    })
}

/// Source text of each ground-truth service, for static dependency scans.
pub fn gt_sources() -> BTreeMap<String, String> {
    [
        ("Cardholders", include_str!("cardholders.rs")),
        ("Books", include_str!("books.rs")),
        ("Borrows", include_str!("borrows.rs")),
        ("Logs", include_str!("logs.rs")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug)]
pub(crate) struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} {id} not found"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn created(id: &str) -> Response {
    (StatusCode::CREATED, Json(json!({"id": id}))).into_response()
}

fn updated(id: &str) -> Response {
    (StatusCode::OK, Json(json!({"id": id}))).into_response()
}

fn no_content() -> Response {
    StatusCode::NO_CONTENT.into_response()
}

fn ok_json(value: Value) -> Response {
    (StatusCode::OK, Json(value)).into_response()
}

/// The request body as a JSON object; 415 unless the media type is JSON.
fn json_object(headers: &HeaderMap, body: &Bytes) -> Result<Document, ApiError> {
    let media = headers
        .get(axum::http::header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .map(|v| v.split(';').next().unwrap_or("").trim().to_ascii_lowercase());
    if media.as_deref() != Some("application/json") {
        return Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "media type must be application/json",
        ));
    }
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ApiError::bad_request("payload must be a JSON object")),
        Err(_) => Err(ApiError::bad_request("payload is not valid JSON")),
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Text,
    Date,
    /// Non-empty array of strings.
    TextList,
}

struct Field {
    name: &'static str,
    kind: Kind,
    required: bool,
}

const fn field(name: &'static str, kind: Kind, required: bool) -> Field {
    Field { name, kind, required }
}

/// Checks names and types of a payload. With `partial`, required fields
/// may be absent but at least one field must be present.
fn check_payload(doc: &Document, fields: &[Field], partial: bool) -> Result<(), ApiError> {
    for key in doc.keys() {
        if !fields.iter().any(|f| f.name == key) {
            return Err(ApiError::bad_request(format!("unexpected field {key}")));
        }
    }
    if partial && doc.is_empty() {
        return Err(ApiError::bad_request("payload is empty"));
    }
    for f in fields {
        match doc.get(f.name) {
            None if f.required && !partial => {
                return Err(ApiError::bad_request(format!("missing field {}", f.name)))
            }
            None => {}
            Some(v) => {
                let ok = match f.kind {
                    Kind::Text => v.is_string(),
                    Kind::Date => v.as_str().and_then(parse_date).is_some(),
                    Kind::TextList => v
                        .as_array()
                        .is_some_and(|a| !a.is_empty() && a.iter().all(Value::is_string)),
                };
                if !ok {
                    return Err(ApiError::bad_request(format!("invalid value for {}", f.name)));
                }
            }
        }
    }
    Ok(())
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).ok()
}

fn format_date(d: NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

fn today(headers: &HeaderMap) -> Result<NaiveDate, ApiError> {
    match headers.get(TODAY_HEADER) {
        Some(v) => v
            .to_str()
            .ok()
            .and_then(parse_date)
            .ok_or_else(|| ApiError::bad_request("invalid X-Today header")),
        None => Ok(chrono::Utc::now().date_naive()),
    }
}

/// Keeps documents whose `field` equals `value` as a string, or contains
/// it when the field is an array.
fn filter_docs(docs: Vec<Document>, query: &[(String, String)]) -> Vec<Document> {
    docs.into_iter()
        .filter(|d| query.iter().all(|(k, v)| d.get(k).is_some_and(|f| value_matches(f, v))))
        .collect()
}

fn value_matches(field: &Value, wanted: &str) -> bool {
    match field {
        Value::String(s) => s == wanted,
        Value::Array(items) => items.iter().any(|i| value_matches(i, wanted)),
        Value::Null => wanted == "null",
        other => other.to_string() == wanted,
    }
}

/// `default_url` with its origin replaced by the configured peer origin.
fn peer_url(config: &GtConfig, peer: &str, default_url: &str) -> String {
    match config.peers.get(peer) {
        Some(origin) => {
            let path = url::Url::parse(default_url)
                .map(|u| u.path().to_string())
                .unwrap_or_default();
            format!("{}{}", origin.trim_end_matches('/'), path)
        }
        None => default_url.to_string(),
    }
}

fn forward_today(builder: reqwest::RequestBuilder, headers: &HeaderMap) -> reqwest::RequestBuilder {
    match headers.get(TODAY_HEADER).and_then(|v| v.to_str().ok()) {
        Some(v) => builder.header(TODAY_HEADER, v),
        None => builder,
    }
}

fn docs_to_json(docs: Vec<Document>) -> Value {
    Value::Array(docs.into_iter().map(Value::Object).collect())
}
