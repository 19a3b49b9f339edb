use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::routing::get;
use axum::Router;
use chrono::{Days, NaiveDate};
use serde_json::{json, Value};

use super::{
    check_payload, created, docs_to_json, field, filter_docs, format_date, forward_today, json_object,
    no_content, ok_json, parse_date, peer_url, today, updated, ApiError, ApiResult, Ctx, Document,
    Field, Kind,
};

const LOGS_URL: &str = "http://logs:5004/internal/logs";

const CREATE_FIELDS: [Field; 3] = [
    field("cardholderId", Kind::Text, true),
    field("bookId", Kind::Text, true),
    field("borrowDate", Kind::Date, false),
];

const UPDATE_FIELDS: [Field; 1] = [field("returnDate", Kind::Date, true)];

pub(super) fn router(ctx: Arc<Ctx>) -> Router {
    Router::new()
        .route("/borrows", get(list).post(create))
        .route("/borrows/{id}", get(read).put(replace).delete(remove))
        .with_state(ctx)
}

async fn list(State(ctx): State<Arc<Ctx>>, Query(q): Query<Vec<(String, String)>>) -> ApiResult {
    Ok(ok_json(docs_to_json(filter_docs(ctx.store.list(), &q))))
}

fn is_overdue(doc: &Document, today: NaiveDate) -> bool {
    let open = doc.get("returnDate").is_none_or(Value::is_null);
    let due = doc.get("dueDate").and_then(Value::as_str).and_then(parse_date);
    open && due.is_some_and(|d| d < today)
}

async fn create(State(ctx): State<Arc<Ctx>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let doc = json_object(&headers, &body)?;
    check_payload(&doc, &CREATE_FIELDS, false)?;
    let today = today(&headers)?;
    let cardholder = doc["cardholderId"].as_str().unwrap_or_default().to_string();
    let book = doc["bookId"].as_str().unwrap_or_default().to_string();
    let borrow_date = doc
        .get("borrowDate")
        .and_then(Value::as_str)
        .and_then(parse_date)
        .unwrap_or(today);

    let overdue = ctx
        .store
        .list()
        .iter()
        .filter(|d| d.get("cardholderId").and_then(Value::as_str) == Some(cardholder.as_str()))
        .filter(|d| is_overdue(d, today))
        .count();
    if overdue >= ctx.config.overdue_limit {
        return Err(ApiError::bad_request(format!(
            "cardholder {cardholder} has {overdue} overdue books"
        )));
    }

    let due = borrow_date
        .checked_add_days(Days::new(ctx.config.loan_days.max(0) as u64))
        .ok_or_else(|| ApiError::bad_request("borrowDate out of range"))?;
    let id = ctx.store.next_id();
    let event = json!({
        "borrowId": id,
        "cardholderId": cardholder,
        "bookId": book,
        "borrowDate": format_date(borrow_date),
    });
    let url = peer_url(&ctx.config, "Logs", LOGS_URL);
    match forward_today(ctx.client.post(&url).json(&event), &headers).send().await {
        Ok(r) if r.status().is_success() => {}
        Ok(r) => {
            return Err(ApiError::internal(format!(
                "Logs answered {}",
                r.status().as_u16()
            )))
        }
        Err(_) => return Err(ApiError::internal("Logs is unreachable")),
    }

    let record = json!({
        "cardholderId": cardholder,
        "bookId": book,
        "borrowDate": format_date(borrow_date),
        "dueDate": format_date(due),
        "returnDate": null,
    });
    ctx.store
        .insert_with_id(&id, record.as_object().cloned().unwrap_or_default());
    Ok(created(&id))
}

async fn read(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult {
    let doc = ctx.store.get(&id).ok_or_else(|| ApiError::not_found("borrow", &id))?;
    Ok(ok_json(Value::Object(doc)))
}

async fn replace(
    State(ctx): State<Arc<Ctx>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let doc = json_object(&headers, &body)?;
    check_payload(&doc, &UPDATE_FIELDS, false)?;
    let existing = ctx.store.get(&id).ok_or_else(|| ApiError::not_found("borrow", &id))?;
    let returned = doc["returnDate"].as_str().and_then(parse_date);
    let borrowed = existing.get("borrowDate").and_then(Value::as_str).and_then(parse_date);
    if let (Some(r), Some(b)) = (returned, borrowed) {
        if r < b {
            return Err(ApiError::bad_request("returnDate precedes borrowDate"));
        }
    }
    if !ctx.store.update(&id, doc) {
        return Err(ApiError::not_found("borrow", &id));
    }
    Ok(updated(&id))
}

async fn remove(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult {
    if !ctx.store.remove(&id) {
        return Err(ApiError::not_found("borrow", &id));
    }
    Ok(no_content())
}
