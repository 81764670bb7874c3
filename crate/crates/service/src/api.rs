//! JSON bodies exchanged with the service.

use std::path::PathBuf;

use metagfn::config::Overrides;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// A job submission. `config` is the TOML text of a run configuration.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct JobRequest {
    pub config: String,
    /// Directory relative paths inside the config resolve against.
    #[serde(default)]
    pub config_dir: Option<PathBuf>,
    /// Directory a relative output path resolves against.
    #[serde(default)]
    pub cwd: Option<PathBuf>,
    #[serde(default)]
    pub overrides: Overrides,
    /// Checkpoint file, required by eval jobs.
    #[serde(default)]
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
    /// Count of metric rows (or sampler records) produced so far.
    pub records: usize,
}

/// One metric row of a training run, or one error record of a sampler run
/// (`episode` is then the sampler iteration).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub repeat: usize,
    pub seed: u64,
    pub episode: usize,
    pub loss_mean: Option<f64>,
    pub l1_error: f64,
    pub branch: Option<String>,
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

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub since: usize,
}
