use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::routing::{get, post};
use axum::Router;
use serde_json::{json, Value};

use super::{
    check_payload, created, docs_to_json, field, filter_docs, json_object, ok_json, ApiError, ApiResult,
    Ctx, Field, Kind,
};

const EVENT_FIELDS: [Field; 4] = [
    field("borrowId", Kind::Text, true),
    field("cardholderId", Kind::Text, true),
    field("bookId", Kind::Text, true),
    field("borrowDate", Kind::Date, true),
];

pub(super) fn router(ctx: Arc<Ctx>) -> Router {
    Router::new()
        .route("/logs", get(list))
        .route("/logs/{id}", get(read))
        .route("/internal/logs", post(append))
        .with_state(ctx)
}

async fn list(State(ctx): State<Arc<Ctx>>, Query(q): Query<Vec<(String, String)>>) -> ApiResult {
    Ok(ok_json(docs_to_json(filter_docs(ctx.store.list(), &q))))
}

async fn read(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult {
    let doc = ctx.store.get(&id).ok_or_else(|| ApiError::not_found("log entry", &id))?;
    Ok(ok_json(Value::Object(doc)))
}

async fn append(State(ctx): State<Arc<Ctx>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let event = json_object(&headers, &body)?;
    check_payload(&event, &EVENT_FIELDS, false)?;
    let entry = json!({
        "borrowId": event["borrowId"],
        "cardholderId": event["cardholderId"],
        "bookId": event["bookId"],
        "timestamp": event["borrowDate"],
    });
    Ok(created(&ctx.store.insert(entry.as_object().cloned().unwrap_or_default())))
}
