//! Stateless HTTP/JSON service over the shared engine.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use biasloom_core::interface::{Engine, EngineError, ErrorCode, Operation};

pub const VERSION_HEADER: &str = "x-biasloom-version";

fn json(status: StatusCode, body: String) -> Response {
    let mut res = (status, body).into_response();
    let headers = res.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    headers.insert(VERSION_HEADER, HeaderValue::from_static(env!("CARGO_PKG_VERSION")));
    res
}

fn error(e: &EngineError) -> Response {
    let status = StatusCode::from_u16(e.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    json(status, e.to_document())
}

async fn run(State(engine): State<Arc<Engine>>, Path(op): Path<String>, body: String) -> Response {
    let Ok(operation) = op.parse::<Operation>() else {
        let e = EngineError::new(ErrorCode::ValidationError, format!("unknown endpoint /api/{op}"));
        return json(StatusCode::NOT_FOUND, e.to_document());
    };
    // The grid engine is CPU-bound; keep it off the async workers.
    match tokio::task::spawn_blocking(move || engine.run(operation, &body)).await {
        Ok(Ok(doc)) => json(StatusCode::OK, doc),
        Ok(Err(e)) => error(&e),
        Err(_) => error(&EngineError::new(ErrorCode::Internal, "analysis aborted")),
    }
}

async fn kb(State(engine): State<Arc<Engine>>) -> Response {
    json(StatusCode::OK, engine.kb_document())
}

async fn healthz() -> Response {
    json(StatusCode::OK, "{\n  \"status\": \"ok\"\n}\n".into())
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/api/kb", get(kb))
        .route("/api/{op}", post(run))
        .route("/healthz", get(healthz))
        .with_state(engine)
}

/// Serves until interrupted.
pub async fn serve(engine: Engine, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("biasloom listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(engine)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
