//! HTTP/JSON front end that runs training campaigns, standalone sampler runs
//! and checkpoint evaluations as background jobs.
//!
//! | method | path                | body          | reply            |
//! |--------|---------------------|---------------|------------------|
//! | GET    | `/health`           |               | [`api::Health`]  |
//! | POST   | `/v1/runs`          | `JobRequest`  | 202 `JobStatus`  |
//! | POST   | `/v1/sample-am`     | `JobRequest`  | 202 `JobStatus`  |
//! | POST   | `/v1/eval`          | `JobRequest`  | 202 `JobStatus`  |
//! | GET    | `/v1/jobs`          |               | `[JobStatus]`    |
//! | GET    | `/v1/jobs/{id}`     |               | `JobStatus`      |
//! | DELETE | `/v1/jobs/{id}`     |               | `JobStatus`      |
//! | GET    | `/v1/jobs/{id}/events?since=n` |    | `[Event]`        |
//!
//! `/v1/runs` uses the mode named in the config; the other two force theirs.
//! Events are the job's metric rows in order; `since` skips ones already seen.
//! DELETE requests cancellation; the job stops at its next episode boundary.
//! Errors come back as [`api::ApiError`] with a 4xx/5xx status.

pub mod api;
mod jobs;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use metagfn::config::RunMode;
use tokio::net::TcpListener;
use uuid::Uuid;

use api::{ApiError, ErrorKind, Event, EventsQuery, Health, JobRequest, JobStatus};
pub use jobs::{classify, Jobs};

#[derive(Clone)]
pub struct AppState {
    pub jobs: Arc<Jobs>,
}

impl AppState {
    /// `limit` jobs run concurrently; further submissions queue.
    pub fn new(limit: usize) -> Self {
        AppState {
            jobs: Arc::new(Jobs::new(limit)),
        }
    }
}

impl Default for AppState {
    fn default() -> Self {
        Self::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

struct Failure(StatusCode, ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        let code = match e.kind {
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Io | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Failure(code, e)
    }
}

fn not_found(id: Uuid) -> Failure {
    ApiError {
        kind: ErrorKind::NotFound,
        message: format!("no job {id}"),
    }
    .into()
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

fn submit(state: &AppState, req: JobRequest, mode: Option<RunMode>) -> Result<(StatusCode, Json<JobStatus>), Failure> {
    let status = state.jobs.submit(req, mode)?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn post_run(State(s): State<AppState>, Json(req): Json<JobRequest>) -> Result<(StatusCode, Json<JobStatus>), Failure> {
    submit(&s, req, None)
}

async fn post_sample_am(
    State(s): State<AppState>,
    Json(req): Json<JobRequest>,
) -> Result<(StatusCode, Json<JobStatus>), Failure> {
    submit(&s, req, Some(RunMode::SampleAm))
}

async fn post_eval(State(s): State<AppState>, Json(req): Json<JobRequest>) -> Result<(StatusCode, Json<JobStatus>), Failure> {
    submit(&s, req, Some(RunMode::Eval))
}

async fn list_jobs(State(s): State<AppState>) -> Json<Vec<JobStatus>> {
    Json(s.jobs.list())
}

async fn get_job(State(s): State<AppState>, Path(id): Path<Uuid>) -> Result<Json<JobStatus>, Failure> {
    s.jobs.get(id).map(|j| Json(j.status())).ok_or_else(|| not_found(id))
}

async fn job_events(
    State(s): State<AppState>,
    Path(id): Path<Uuid>,
    Query(q): Query<EventsQuery>,
) -> Result<Json<Vec<Event>>, Failure> {
    s.jobs.get(id).map(|j| Json(j.events(q.since))).ok_or_else(|| not_found(id))
}

async fn cancel_job(State(s): State<AppState>, Path(id): Path<Uuid>) -> Result<Json<JobStatus>, Failure> {
    let job = s.jobs.get(id).ok_or_else(|| not_found(id))?;
    job.cancel();
    Ok(Json(job.status()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/runs", post(post_run))
        .route("/v1/sample-am", post(post_sample_am))
        .route("/v1/eval", post(post_eval))
        .route("/v1/jobs", get(list_jobs))
        .route("/v1/jobs/{id}", get(get_job).delete(cancel_job))
        .route("/v1/jobs/{id}/events", get(job_events))
        .with_state(state)
}

/// Binds `addr` and returns the bound address with the serving future.
pub async fn bind(
    addr: SocketAddr,
    state: AppState,
) -> std::io::Result<(SocketAddr, impl std::future::Future<Output = std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, async move { axum::serve(listener, router(state)).await }))
}
