//! Read-only HTTP API over one curated trace.

use std::sync::Arc;
use std::time::Instant;

use axum::extract::{RawQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use commtrace_core::analytics::{Analyzer, FilterSpec, View};
use commtrace_core::model::SCHEMA_VERSION;
use serde::Serialize;
use serde_json::value::RawValue;

use crate::query::parse_query;

/// Path of each view's endpoint.
pub const ROUTES: [(&str, View); 7] = [
    ("/summary", View::Summary),
    ("/matrix", View::Matrix),
    ("/graph/process", View::Pgraph),
    ("/graph/device", View::Dgraph),
    ("/timeline", View::Timeline),
    ("/top", View::Top),
    ("/filters/options", View::Options),
];

#[derive(Serialize)]
pub struct Envelope<'a> {
    pub schema_version: u32,
    pub filter: &'a FilterSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_ns: Option<u64>,
    pub payload: &'a RawValue,
    pub timing_ms: f64,
}

#[derive(Serialize)]
struct ApiError<'a> {
    status: u16,
    error: &'a str,
}

fn json(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error(status: StatusCode, msg: &str) -> Response {
    let body = serde_json::to_vec(&ApiError { status: status.as_u16(), error: msg }).expect("errors serialize");
    json(status, body)
}

async fn view(analyzer: Arc<Analyzer>, view: View, raw: Option<String>) -> Response {
    let start = Instant::now();
    let q = match parse_query(raw.as_deref().unwrap_or(""), view == View::Timeline) {
        Ok(q) => q,
        Err(e) => return error(StatusCode::BAD_REQUEST, &e.0),
    };
    let rendered = {
        let f = q.filter.clone();
        tokio::task::spawn_blocking(move || analyzer.render(view, &f, q.bin_ns)).await
    };
    let payload = match rendered {
        Ok(Ok(bytes)) => bytes,
        Ok(Err(e)) => return error(StatusCode::BAD_REQUEST, &e.to_string()),
        Err(e) => {
            log::error!("view {view} failed: {e}");
            return error(StatusCode::SERVICE_UNAVAILABLE, "view computation was interrupted");
        }
    };
    let payload = String::from_utf8(payload).expect("views are utf-8 json");
    let payload = RawValue::from_string(payload).expect("views are valid json");
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        filter: &q.filter,
        bin_ns: q.bin_ns,
        payload: &payload,
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    log::debug!("{view} served in {:.3} ms", envelope.timing_ms);
    json(StatusCode::OK, serde_json::to_vec(&envelope).expect("envelopes serialize"))
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(analyzer: Arc<Analyzer>) -> Router {
    let mut r = Router::new();
    for (path, v) in ROUTES {
        r = r.route(
            path,
            get(move |State(a): State<Arc<Analyzer>>, RawQuery(q): RawQuery| view(a, v, q)),
        );
    }
    r.fallback(not_found).with_state(analyzer)
}

/// Serves until `shutdown` resolves.
pub async fn serve<F>(listener: tokio::net::TcpListener, analyzer: Arc<Analyzer>, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(analyzer)).with_graceful_shutdown(shutdown).await
}
