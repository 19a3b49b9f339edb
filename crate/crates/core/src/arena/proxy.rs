//! Forward HTTP proxy that resolves in-network host names (`borrows`,
//! `logs`, ...) to local addresses, so generated code using the
//! deployment URLs reaches its peers without container DNS.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{header, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;

struct Routes {
    /// Lower-case host name to origin.
    hosts: HashMap<String, String>,
    client: reqwest::Client,
}

const HOP_BY_HOP: [HeaderName; 4] = [
    header::CONNECTION,
    header::TRANSFER_ENCODING,
    header::HOST,
    header::PROXY_AUTHORIZATION,
];

async fn forward(State(routes): State<Arc<Routes>>, req: Request) -> Response {
    let host = req
        .uri()
        .host()
        .map(str::to_string)
        .or_else(|| {
            req.headers()
                .get(header::HOST)
                .and_then(|h| h.to_str().ok())
                .map(|h| h.split(':').next().unwrap_or(h).to_string())
        })
        .unwrap_or_default()
        .to_ascii_lowercase();
    let Some(origin) = routes.hosts.get(&host) else {
        return (StatusCode::BAD_GATEWAY, format!("unknown host {host}")).into_response();
    };
    let path = req
        .uri()
        .path_and_query()
        .map_or("/".to_string(), |p| p.as_str().to_string());
    let method = req.method().clone();
    let mut headers = req.headers().clone();
    for h in &HOP_BY_HOP {
        headers.remove(h);
    }
    let Ok(body) = to_bytes(req.into_body(), 16 * 1024 * 1024).await else {
        return (StatusCode::BAD_REQUEST, "unreadable body").into_response();
    };
    let upstream = routes
        .client
        .request(method, format!("{origin}{path}"))
        .headers(headers)
        .body(body)
        .send()
        .await;
    match upstream {
        Ok(r) => {
            let status = r.status();
            let mut headers = r.headers().clone();
            for h in &HOP_BY_HOP {
                headers.remove(h);
            }
            headers.remove(header::CONTENT_LENGTH);
            let bytes = r.bytes().await.unwrap_or_default();
            let mut resp = Response::new(Body::from(bytes));
            *resp.status_mut() = status;
            *resp.headers_mut() = headers;
            resp
        }
        Err(_) => (StatusCode::BAD_GATEWAY, format!("{host} is unreachable")).into_response(),
    }
}

pub(super) async fn start(hosts: HashMap<String, String>) -> std::io::Result<(String, ProxyHandle)> {
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let routes = Arc::new(Routes {
        hosts,
        client: reqwest::Client::builder()
            .no_proxy()
            .build()
            .map_err(std::io::Error::other)?,
    });
    let app = Router::new().fallback(forward).with_state(routes);
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok((format!("http://{addr}"), ProxyHandle { task }))
}

pub(super) struct ProxyHandle {
    task: tokio::task::JoinHandle<()>,
}

impl Drop for ProxyHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}
