use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use metagfn_service::api::{ApiError, ErrorKind, Event, JobRequest, JobState, JobStatus};
use metagfn_service::{router, AppState};
use serde::de::DeserializeOwned;
use tower::ServiceExt;

async fn call<T: DeserializeOwned>(app: &axum::Router, method: &str, uri: &str, body: Option<&JobRequest>) -> (StatusCode, T) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(serde_json::to_vec(b).unwrap())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&bytes))))
}

fn tiny(out: &std::path::Path, batches: usize) -> JobRequest {
    JobRequest {
        config: format!(
            "[run]\nout = \"{}\"\ndeterministic = true\n[model]\nhidden = 8\nlayers = 1\n\
             [train]\nbatches = {batches}\nbatch_size = 4\neval_every = 2\neval_samples = 50\ncheckpoint_every = 1000\n\
             [sample_am]\nwalkers = 2\niterations = 20\nrecord_every = 10\n",
            out.display()
        ),
        ..Default::default()
    }
}

async fn wait(app: &axum::Router, id: uuid::Uuid) -> JobStatus {
    for _ in 0..2000 {
        let (_, s): (_, JobStatus) = call(app, "GET", &format!("/v1/jobs/{id}"), None).await;
        if s.state.is_terminal() {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test]
async fn health_reports_ok() {
    let app = router(AppState::new(1));
    let (code, v): (_, serde_json::Value) = call(&app, "GET", "/health", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn train_job_runs_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(1));
    let (code, s): (_, JobStatus) = call(&app, "POST", "/v1/runs", Some(&tiny(dir.path(), 4))).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    assert_eq!(s.mode, "train");
    let done = wait(&app, s.id).await;
    assert_eq!(done.state, JobState::Succeeded, "{:?}", done.error);
    assert_eq!(done.progress.records, 2);
    assert_eq!(done.result.unwrap()["runs"][0]["final_episode"], 4);
    assert!(dir.path().join("seed-0/metrics.csv").exists());
    assert!(dir.path().join("summary.csv").exists());

    let (_, events): (_, Vec<Event>) = call(&app, "GET", &format!("/v1/jobs/{}/events", s.id), None).await;
    assert_eq!(events.iter().map(|e| e.episode).collect::<Vec<_>>(), vec![2, 4]);
    assert_eq!(events[0].branch.as_deref(), Some("on_policy"));
    let (_, tail): (_, Vec<Event>) = call(&app, "GET", &format!("/v1/jobs/{}/events?since=1", s.id), None).await;
    assert_eq!(tail, events[1..]);
    let (_, none): (_, Vec<Event>) = call(&app, "GET", &format!("/v1/jobs/{}/events?since=9", s.id), None).await;
    assert!(none.is_empty());

    let (_, all): (_, Vec<JobStatus>) = call(&app, "GET", "/v1/jobs", None).await;
    assert_eq!(all.len(), 1);
}

#[tokio::test]
async fn sample_am_endpoint_forces_mode() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(1));
    let (_, s): (_, JobStatus) = call(&app, "POST", "/v1/sample-am", Some(&tiny(dir.path(), 4))).await;
    assert_eq!(s.mode, "sample-am");
    let done = wait(&app, s.id).await;
    assert_eq!(done.state, JobState::Succeeded, "{:?}", done.error);
    assert_eq!(done.result.unwrap()["series"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("potential-grids.txt").exists());
    assert!(dir.path().join("am-l1.csv").exists());
}

#[tokio::test]
async fn eval_job_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(1));
    let (_, s): (_, JobStatus) = call(&app, "POST", "/v1/runs", Some(&tiny(dir.path(), 2))).await;
    wait(&app, s.id).await;
    let mut req = tiny(dir.path(), 2);
    let (code, e): (_, ApiError) = call(&app, "POST", "/v1/eval", Some(&req)).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(e.kind, ErrorKind::InvalidParameter);
    req.checkpoint = Some(dir.path().join("seed-0/checkpoint-0000002.txt"));
    let (_, s): (_, JobStatus) = call(&app, "POST", "/v1/eval", Some(&req)).await;
    let done = wait(&app, s.id).await;
    assert_eq!(done.state, JobState::Succeeded, "{:?}", done.error);
    assert_eq!(done.result.unwrap()["basins"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn bad_requests_are_classified() {
    let app = router(AppState::new(1));
    let mut req = JobRequest {
        config: "[run]\nenv = \"sphere\"\n".into(),
        ..Default::default()
    };
    let (code, e): (_, ApiError) = call(&app, "POST", "/v1/runs", Some(&req)).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(e.kind, ErrorKind::InvalidName);
    assert!(e.message.contains("line, grid, torus"), "{}", e.message);

    req.config = "[run\n".into();
    let (_, e): (_, ApiError) = call(&app, "POST", "/v1/runs", Some(&req)).await;
    assert_eq!(e.kind, ErrorKind::Parse);

    req.config = "[run]\nrepeats = 0\n".into();
    let (_, e): (_, ApiError) = call(&app, "POST", "/v1/runs", Some(&req)).await;
    assert_eq!(e.kind, ErrorKind::InvalidParameter);

    let (code, e): (_, ApiError) = call(&app, "GET", &format!("/v1/jobs/{}", uuid::Uuid::nil()), None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(e.kind, ErrorKind::NotFound);
}

#[tokio::test]
async fn queued_and_running_jobs_can_be_cancelled() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(1));
    let (_, long): (_, JobStatus) = call(&app, "POST", "/v1/runs", Some(&tiny(&dir.path().join("a"), 1_000_000))).await;
    let (_, queued): (_, JobStatus) = call(&app, "POST", "/v1/runs", Some(&tiny(&dir.path().join("b"), 2))).await;
    let (_, s): (_, JobStatus) = call(&app, "DELETE", &format!("/v1/jobs/{}", queued.id), None).await;
    assert_eq!(s.state, JobState::Cancelled);
    let (_, _s): (_, JobStatus) = call(&app, "DELETE", &format!("/v1/jobs/{}", long.id), None).await;
    let done = wait(&app, long.id).await;
    assert_eq!(done.state, JobState::Cancelled);
    assert_eq!(done.error.unwrap().kind, ErrorKind::Cancelled);
    assert!(!dir.path().join("b").exists());
}
