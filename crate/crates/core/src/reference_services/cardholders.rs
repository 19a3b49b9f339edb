use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::routing::get;
use axum::Router;
use chrono::NaiveDate;
use serde_json::{json, Value};

use super::{
    check_payload, created, docs_to_json, field, filter_docs, forward_today, json_object, no_content,
    ok_json, parse_date, peer_url, today, updated, ApiError, ApiResult, Ctx, Field, Kind,
};

const BORROWS_URL: &str = "http://borrows:5003/borrows";

const FIELDS: [Field; 2] = [field("name", Kind::Text, true), field("email", Kind::Text, true)];

pub(super) fn router(ctx: Arc<Ctx>) -> Router {
    Router::new()
        .route("/cardholders", get(list).post(create))
        .route("/cardholders/{id}", get(read).put(replace).delete(remove))
        .route("/cardholders/fines/{id}", get(fines))
        .with_state(ctx)
}

async fn list(State(ctx): State<Arc<Ctx>>, Query(q): Query<Vec<(String, String)>>) -> ApiResult {
    Ok(ok_json(docs_to_json(filter_docs(ctx.store.list(), &q))))
}

async fn create(State(ctx): State<Arc<Ctx>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let doc = json_object(&headers, &body)?;
    check_payload(&doc, &FIELDS, false)?;
    Ok(created(&ctx.store.insert(doc)))
}

async fn read(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult {
    let doc = ctx
        .store
        .get(&id)
        .ok_or_else(|| ApiError::not_found("cardholder", &id))?;
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
        return Err(ApiError::not_found("cardholder", &id));
    }
    Ok(updated(&id))
}

async fn remove(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>) -> ApiResult {
    if !ctx.store.remove(&id) {
        return Err(ApiError::not_found("cardholder", &id));
    }
    Ok(no_content())
}

async fn fines(State(ctx): State<Arc<Ctx>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    if ctx.store.get(&id).is_none() {
        return Err(ApiError::not_found("cardholder", &id));
    }
    let today = today(&headers)?;
    let url = peer_url(&ctx.config, "Borrows", BORROWS_URL);
    let request = forward_today(ctx.client.get(&url).query(&[("cardholderId", &id)]), &headers);
    let borrows: Vec<Value> = match request.send().await {
        Ok(r) if r.status().is_success() => r
            .json()
            .await
            .map_err(|_| ApiError::internal("Borrows returned an unreadable answer"))?,
        Ok(r) => {
            return Err(ApiError::internal(format!(
                "Borrows answered {}",
                r.status().as_u16()
            )))
        }
        Err(_) => return Err(ApiError::internal("Borrows is unreachable")),
    };
    let days: i64 = borrows.iter().map(|b| overdue_days(b, today)).sum();
    let amount = (days as f64 * ctx.config.fine_per_day * 100.0).round() / 100.0;
    Ok(ok_json(json!({"id": id, "fineAmount": amount})))
}

/// Days past due for an unreturned borrow, zero otherwise.
fn overdue_days(borrow: &Value, today: NaiveDate) -> i64 {
    let returned = borrow.get("returnDate").is_some_and(|r| !r.is_null());
    let due = borrow.get("dueDate").and_then(Value::as_str).and_then(parse_date);
    match due {
        Some(due) if !returned && due < today => (today - due).num_days(),
        _ => 0,
    }
}
