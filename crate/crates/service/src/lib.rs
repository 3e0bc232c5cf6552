//! JSON-over-HTTP access to problem registration, background optimization runs
//! and archive resampling.

mod error;
mod registry;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mcd_core::sampler::SamplingRequest;
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::CorsLayer;

pub use error::ApiError;
pub use registry::{Registry, RunRecord, RunRequest, ServiceOptions};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_PAGE_LIMIT: usize = 100;

type Shared = State<Arc<Registry>>;

/// Routes over `registry`; `cors` adds permissive cross-origin headers.
pub fn router(registry: Arc<Registry>, cors: bool) -> Router {
    let app = Router::new()
        .route("/v1/problems", post(create_problem))
        .route("/v1/runs", post(create_run).get(list_runs))
        .route("/v1/runs/{id}", get(get_run))
        .route("/v1/runs/{id}/samples", post(sample_run))
        .route("/v1/runs/{id}/candidates", get(candidates))
        .with_state(registry);
    if cors {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

/// Binds and serves until interrupted.
pub async fn serve(opts: ServiceOptions, port: u16, cors: bool) -> std::io::Result<()> {
    let registry = Registry::open(opts)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(registry, cors))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create_problem(State(reg): Shared, body: Bytes) -> Result<Response, ApiError> {
    let (id, created) = blocking(move || reg.register_problem(&body)).await?;
    Ok(Json(json!({ "problem_id": id, "created": created })).into_response())
}

async fn create_run(State(reg): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: RunRequest = error::parse_body(&body)?;
    let (record, config) = reg.create_run(req)?;
    reg.spawn(record.run_id.clone(), config);
    Ok((StatusCode::ACCEPTED, Json(record)).into_response())
}

async fn list_runs(State(reg): Shared) -> Json<serde_json::Value> {
    Json(json!({ "runs": reg.list_runs() }))
}

async fn get_run(State(reg): Shared, Path(id): Path<String>) -> Result<Json<RunRecord>, ApiError> {
    reg.run(&id)
        .map(Json)
        .ok_or_else(|| ApiError::NotFound(format!("no run `{id}`")))
}

async fn sample_run(State(reg): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    if reg.run(&id).is_none() {
        return Err(ApiError::NotFound(format!("no run `{id}`")));
    }
    let request: SamplingRequest = error::parse_body(&body)?;
    let doc = blocking(move || reg.sample(&id, &request)).await?;
    Ok(Json(doc).into_response())
}

#[derive(Debug, Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    DEFAULT_PAGE_LIMIT
}

async fn candidates(State(reg): Shared, Path(id): Path<String>, Query(page): Query<Page>) -> Result<Response, ApiError> {
    let doc = reg.candidates(&id, page.offset, page.limit)?;
    Ok(Json(doc).into_response())
}
