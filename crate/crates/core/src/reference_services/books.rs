use std::collections::HashMap;
use std::path::Path as FsPath;
use std::sync::Arc;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::routing::get;
use axum::Router;
use serde::Deserialize;
use serde_json::Value;

use super::{
    check_payload, created, docs_to_json, field, filter_docs, json_object, no_content, ok_json, updated,
    ApiError, ApiResult, Ctx, Field, Kind,
};

const GOOGLE_BOOKS_URL: &str = "https://www.googleapis.com/books/v1/volumes";
const NOT_AVAILABLE: &str = "Not Available";

const FIELDS: [Field; 4] = [
    field("title", Kind::Text, true),
    field("authors", Kind::TextList, true),
    field("isbn", Kind::Text, true),
    field("genre", Kind::Text, false),
];

/// Publication metadata found for an ISBN.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
pub struct BookMeta {
    #[serde(default)]
    pub publisher: Option<String>,
    #[serde(default, rename = "publishedDate")]
    pub published_date: Option<String>,
}

#[async_trait]
pub trait BookLookup: Send + Sync {
    /// Never fails; unknown or unreachable means empty metadata.
    async fn lookup(&self, isbn: &str) -> BookMeta;
}

/// Finds nothing.
pub struct NoLookup;

#[async_trait]
impl BookLookup for NoLookup {
    async fn lookup(&self, _isbn: &str) -> BookMeta {
        BookMeta::default()
    }
}

/// Fixed ISBN table, used instead of the network.
#[derive(Debug, Clone, Default)]
pub struct StaticLookup {
    entries: HashMap<String, BookMeta>,
}

impl StaticLookup {
    pub fn new(entries: HashMap<String, BookMeta>) -> Self {
        Self { entries }
    }

    pub fn load(path: &FsPath) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries = serde_json::from_str(&text).map_err(std::io::Error::other)?;
        Ok(Self { entries })
    }
}

#[async_trait]
impl BookLookup for StaticLookup {
    async fn lookup(&self, isbn: &str) -> BookMeta {
        self.entries.get(isbn).cloned().unwrap_or_default()
    }
}

/// Queries the Google Books volumes endpoint.
pub struct GoogleBooksLookup {
    client: reqwest::Client,
    url: String,
}

impl GoogleBooksLookup {
    pub fn new(client: reqwest::Client) -> Self {
        Self {
            client,
            url: GOOGLE_BOOKS_URL.to_string(),
        }
    }
}

#[async_trait]
impl BookLookup for GoogleBooksLookup {
    async fn lookup(&self, isbn: &str) -> BookMeta {
        let query = format!("isbn:{isbn}");
        let Ok(response) = self.client.get(&self.url).query(&[("q", query)]).send().await else {
            return BookMeta::default();
        };
        let Ok(body) = response.json::<Value>().await else {
            return BookMeta::default();
        };
        body.pointer("/items/0/volumeInfo")
            .cloned()
            .and_then(|info| serde_json::from_value(info).ok())
            .unwrap_or_default()
    }
}

pub(super) fn router(ctx: Arc<Ctx>) -> Router {
    Router::new()
        .route("/books", get(list).post(create))
        .route("/books/{id}", get(read).put(replace).delete(remove))
        .with_state(ctx)
}

async fn list(State(ctx): State<Arc<Ctx>>, Query(q): Query<Vec<(String, String)>>) -> ApiResult {
    Ok(ok_json(docs_to_json(filter_docs(ctx.store.list(), &q))))
}

async fn create(State(ctx): State<Arc<Ctx>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let mut doc = json_object(&headers, &body)?;
    check_payload(&doc, &FIELDS, false)?;
    doc.entry("genre")
        .or_insert_with(|| Value::String(NOT_AVAILABLE.into()));
    let isbn = doc["isbn"].as_str().unwrap_or_default().to_string();
    let meta = ctx.config.lookup.lookup(&isbn).await;
    let or_na = |v: Option<String>| Value::String(v.unwrap_or_else(|| NOT_AVAILABLE.into()));
    doc.insert("publisher".into(), or_na(meta.publisher));
    doc.insert("publishedDate".into(), or_na(meta.published_date));
    Ok(created(&ctx.store.insert(doc)))
}

async fn read(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult {
    let doc = ctx.store.get(&id).ok_or_else(|| ApiError::not_found("book", &id))?;
    Ok(ok_json(Value::Object(doc)))
}

async fn replace(
    State(ctx): State<Arc<Ctx>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let doc = json_object(&headers, &body)?;
    check_payload(&doc, &FIELDS, true)?;
    if !ctx.store.update(&id, doc) {
        return Err(ApiError::not_found("book", &id));
    }
    Ok(updated(&id))
}

async fn remove(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult {
    if !ctx.store.remove(&id) {
        return Err(ApiError::not_found("book", &id));
    }
    Ok(no_content())
}
