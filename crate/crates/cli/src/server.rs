//! Local HTTP service. Request bodies are the same JSON documents the
//! command line accepts and responses are rendered by the same code.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use uuid::Uuid;

use crate::api::{self, ApiError, Context, ErrorBody, ErrorDoc, HeatmapRequest};
use crate::jobs::{JobState, JobStore};

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Clone)]
pub struct AppState {
    ctx: Arc<Context>,
    jobs: Arc<JobStore>,
    // bounds concurrent heatmap evaluations
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(ctx: Context, job_cap: usize, workers: usize) -> AppState {
        AppState {
            ctx: Arc::new(ctx),
            jobs: Arc::new(JobStore::new(job_cap)),
            workers: Arc::new(Semaphore::new(workers.max(1))),
        }
    }

    pub fn jobs(&self) -> &JobStore {
        &self.jobs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: Uuid,
}

fn json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error(e: ApiError) -> Response {
    let status = match e {
        ApiError::Schema(_) => StatusCode::BAD_REQUEST,
        ApiError::Domain(_) => StatusCode::UNPROCESSABLE_ENTITY,
    };
    json(status, api::to_json(&e.body()))
}

fn reply<T: Serialize>(r: api::ApiResult<T>) -> Response {
    match r {
        Ok(v) => json(StatusCode::OK, api::to_json(&v)),
        Err(e) => error(e),
    }
}

// Runs CPU-bound work off the async executor.
async fn blocking<T, F>(f: F) -> api::ApiResult<T>
where
    F: FnOnce() -> api::ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| {
        Err(ApiError::Domain(gridstab::Error::InvalidArgument(format!("worker task failed: {e}"))))
    })
}

async fn feeder(State(st): State<AppState>) -> Response {
    match st.ctx.feeder.clone() {
        Some(f) => reply(blocking(move || api::feeder_view(&f)).await),
        None => error(ApiError::Schema("the service was started without a feeder".into())),
    }
}

async fn acrit(State(st): State<AppState>, body: Bytes) -> Response {
    let req = match api::parse::<api::AcritRequest>(&body) {
        Ok(r) => r,
        Err(e) => return error(e),
    };
    reply(blocking(move || api::acrit(&st.ctx, req)).await)
}

async fn sweep(State(st): State<AppState>, body: Bytes) -> Response {
    let req = match api::parse::<api::SweepRequest>(&body) {
        Ok(r) => r,
        Err(e) => return error(e),
    };
    reply(blocking(move || api::sweep(&st.ctx, req)).await)
}

async fn simulate(State(st): State<AppState>, body: Bytes) -> Response {
    let req = match api::parse::<api::SimulateRequest>(&body) {
        Ok(r) => r,
        Err(e) => return error(e),
    };
    reply(blocking(move || api::simulate(&st.ctx, req)).await)
}

async fn heatmap(State(st): State<AppState>, body: Bytes) -> Response {
    let req = match api::parse::<HeatmapRequest>(&body) {
        Ok(r) => r,
        Err(e) => return error(e),
    };
    if !req.run_async {
        let _permit = st.workers.clone().acquire_owned().await.expect("semaphore open");
        let ctx = st.ctx.clone();
        return reply(blocking(move || api::heatmap(&ctx, req)).await);
    }
    let id = st.jobs.submit();
    let (jobs, workers, ctx) = (st.jobs.clone(), st.workers.clone(), st.ctx.clone());
    tokio::spawn(async move {
        let _permit = workers.acquire_owned().await.expect("semaphore open");
        jobs.update(id, JobState::Running);
        let state = match blocking(move || api::heatmap(&ctx, req)).await {
            Ok(result) => JobState::Done { result },
            Err(e) => JobState::Failed { error: e.body().error },
        };
        jobs.update(id, state);
    });
    json(StatusCode::ACCEPTED, api::to_json(&JobAccepted { job_id: id }))
}

async fn job(State(st): State<AppState>, Path(id): Path<String>) -> Response {
    let doc = id.parse::<Uuid>().ok().and_then(|id| st.jobs.get(id));
    match doc {
        Some(doc) => json(StatusCode::OK, api::to_json(&doc)),
        None => json(
            StatusCode::NOT_FOUND,
            api::to_json(&ErrorDoc { error: ErrorBody { code: "unknown_job".into(), message: format!("no job `{id}`") } }),
        ),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/feeder", get(feeder))
        .route("/acrit", post(acrit))
        .route("/sweep", post(sweep))
        .route("/simulate", post(simulate))
        .route("/heatmap", post(heatmap))
        .route("/jobs/{id}", get(job))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
