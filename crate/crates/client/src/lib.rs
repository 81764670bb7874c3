//! Async client for the metagfn job service.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// Fields of the config that command-line flags replace.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub repeats: Option<usize>,
    pub batches: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct JobRequest {
    /// TOML text of the run configuration.
    pub config: String,
    pub config_dir: Option<PathBuf>,
    pub cwd: Option<PathBuf>,
    pub overrides: Overrides,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed | JobState::Cancelled)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Parse,
    InvalidName,
    InvalidParameter,
    NonFiniteLoss,
    Io,
    Cancelled,
    NotFound,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub repeat: usize,
    pub repeats: usize,
    pub seed: u64,
    pub episode: usize,
    pub total_episodes: usize,
    pub loss_mean: Option<f64>,
    pub l1_error: Option<f64>,
    pub records: usize,
}

/// A metric row of a training job, or an error record of a sampler job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub repeat: usize,
    pub seed: u64,
    pub episode: usize,
    pub loss_mean: Option<f64>,
    pub l1_error: f64,
    pub branch: Option<String>,
}

/// What [`Client::wait`] reports while a job runs.
#[derive(Clone, Copy, Debug)]
pub enum Update<'a> {
    State(&'a JobStatus),
    Event(&'a Event),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: Uuid,
    pub mode: String,
    pub state: JobState,
    pub out: PathBuf,
    pub progress: Progress,
    #[serde(default)]
    pub result: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<ApiError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{}", .0.message)]
    Api(ApiError),
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        if resp.status().is_success() {
            return Ok(resp.json().await?);
        }
        let status = resp.status();
        let text = resp.text().await?;
        Err(ClientError::Api(serde_json::from_str(&text).unwrap_or(ApiError {
            kind: ErrorKind::Internal,
            message: format!("server replied {status}: {text}"),
        })))
    }

    pub async fn health(&self) -> Result<Health> {
        Self::decode(self.http.get(format!("{}/health", self.base)).send().await?).await
    }

    async fn post(&self, path: &str, req: &JobRequest) -> Result<JobStatus> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(req).send().await?).await
    }

    /// Runs the mode named in the config.
    pub async fn submit_run(&self, req: &JobRequest) -> Result<JobStatus> {
        self.post("/v1/runs", req).await
    }

    pub async fn submit_sample_am(&self, req: &JobRequest) -> Result<JobStatus> {
        self.post("/v1/sample-am", req).await
    }

    pub async fn submit_eval(&self, req: &JobRequest) -> Result<JobStatus> {
        self.post("/v1/eval", req).await
    }

    pub async fn job(&self, id: Uuid) -> Result<JobStatus> {
        Self::decode(self.http.get(format!("{}/v1/jobs/{id}", self.base)).send().await?).await
    }

    pub async fn jobs(&self) -> Result<Vec<JobStatus>> {
        Self::decode(self.http.get(format!("{}/v1/jobs", self.base)).send().await?).await
    }

    pub async fn cancel(&self, id: Uuid) -> Result<JobStatus> {
        Self::decode(self.http.delete(format!("{}/v1/jobs/{id}", self.base)).send().await?).await
    }

    pub async fn events(&self, id: Uuid, since: usize) -> Result<Vec<Event>> {
        Self::decode(
            self.http
                .get(format!("{}/v1/jobs/{id}/events?since={since}", self.base))
                .send()
                .await?,
        )
        .await
    }

    /// Polls until the job reaches a terminal state, reporting state changes
    /// and every event in order.
    pub async fn wait(&self, id: Uuid, every: Duration, mut on_update: impl FnMut(Update<'_>)) -> Result<JobStatus> {
        let mut state = None;
        let mut seen = 0;
        loop {
            let s = self.job(id).await?;
            if state != Some(s.state) {
                on_update(Update::State(&s));
                state = Some(s.state);
            }
            let events = self.events(id, seen).await?;
            seen += events.len();
            for e in &events {
                on_update(Update::Event(e));
            }
            if s.state.is_terminal() {
                return Ok(s);
            }
            tokio::time::sleep(every).await;
        }
    }
}
