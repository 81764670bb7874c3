use std::time::Duration;

use metagfn_client::{Client, ClientError, ErrorKind, JobRequest, JobState, Overrides, Update};
use metagfn_service::{bind, AppState};

async fn server() -> Client {
    let (addr, serve) = bind("127.0.0.1:0".parse().unwrap(), AppState::new(1)).await.unwrap();
    tokio::spawn(serve);
    Client::new(format!("http://{addr}/"))
}

fn request(out: &std::path::Path) -> JobRequest {
    JobRequest {
        config: "[run]\ndeterministic = true\n[model]\nhidden = 8\nlayers = 1\n\
                 [train]\nbatches = 50\nbatch_size = 4\neval_every = 2\neval_samples = 50\n"
            .into(),
        overrides: Overrides {
            seed: Some(3),
            out: Some(out.to_path_buf()),
            repeats: Some(2),
            batches: Some(4),
        },
        ..Default::default()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn submit_wait_and_list() {
    let client = server().await;
    assert_eq!(client.health().await.unwrap().status, "ok");
    let dir = tempfile::tempdir().unwrap();
    let job = client.submit_run(&request(dir.path())).await.unwrap();
    assert_eq!(job.progress.repeats, 2);
    assert_eq!(job.progress.total_episodes, 4);
    let mut events = Vec::new();
    let mut states = Vec::new();
    let done = client
        .wait(job.id, Duration::from_millis(5), |u| match u {
            Update::State(s) => states.push(s.state),
            Update::Event(e) => events.push((e.seed, e.episode)),
        })
        .await
        .unwrap();
    assert_eq!(done.state, JobState::Succeeded, "{:?}", done.error);
    assert_eq!(events, vec![(3, 2), (3, 4), (4, 2), (4, 4)]);
    assert_eq!(states.last(), Some(&JobState::Succeeded));
    let runs = done.result.unwrap()["runs"].as_array().unwrap().clone();
    assert_eq!(runs.iter().map(|r| r["seed"].as_u64().unwrap()).collect::<Vec<_>>(), vec![3, 4]);
    assert!(dir.path().join("seed-4/metrics.csv").exists());
    assert_eq!(client.jobs().await.unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_carry_their_kind() {
    let client = server().await;
    let bad = JobRequest {
        config: "[train]\nloss = \"xb\"\n".into(),
        ..Default::default()
    };
    match client.submit_run(&bad).await {
        Err(ClientError::Api(e)) => assert_eq!(e.kind, ErrorKind::InvalidName),
        other => panic!("{other:?}"),
    }
    match client.job(uuid::Uuid::new_v4()).await {
        Err(ClientError::Api(e)) => assert_eq!(e.kind, ErrorKind::NotFound),
        other => panic!("{other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cancel_stops_a_long_run() {
    let client = server().await;
    let dir = tempfile::tempdir().unwrap();
    let mut req = request(dir.path());
    req.overrides.batches = Some(10_000_000);
    let job = client.submit_run(&req).await.unwrap();
    client.cancel(job.id).await.unwrap();
    let done = client.wait(job.id, Duration::from_millis(5), |_| {}).await.unwrap();
    assert_eq!(done.state, JobState::Cancelled);
}

#[tokio::test]
async fn unreachable_server_is_an_http_error() {
    let client = Client::new("http://127.0.0.1:9");
    assert!(matches!(client.health().await, Err(ClientError::Http(_))));
}
