use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use metagfn::campaign::{self, CampaignObserver, Outcome};
use metagfn::config::{RunConfig, RunMode};
use metagfn::trainer::MetricRow;
use metagfn::Error;
use serde_json::json;
use tokio::sync::Semaphore;
use uuid::Uuid;

use crate::api::{ApiError, ErrorKind, Event, JobRequest, JobState, JobStatus, Progress};

pub fn classify(e: &Error) -> ErrorKind {
    match e {
        Error::Parse(_) => ErrorKind::Parse,
        Error::UnknownName { .. } => ErrorKind::InvalidName,
        Error::NonFiniteLoss { .. } | Error::NonFiniteTrajectory { .. } => ErrorKind::NonFiniteLoss,
        Error::Io(_) => ErrorKind::Io,
        Error::Cancelled => ErrorKind::Cancelled,
        _ => ErrorKind::InvalidParameter,
    }
}

pub fn api_error(e: &Error) -> ApiError {
    ApiError {
        kind: classify(e),
        message: e.to_string(),
    }
}

pub struct Job {
    status: Mutex<JobStatus>,
    events: Mutex<Vec<Event>>,
    cancel: AtomicBool,
}

impl Job {
    pub fn status(&self) -> JobStatus {
        self.status.lock().unwrap().clone()
    }

    /// Events from index `since` on.
    pub fn events(&self, since: usize) -> Vec<Event> {
        self.events.lock().unwrap().get(since..).map(<[Event]>::to_vec).unwrap_or_default()
    }

    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
        let mut s = self.status.lock().unwrap();
        if s.state == JobState::Queued {
            s.state = JobState::Cancelled;
            s.error = Some(api_error(&Error::Cancelled));
        }
    }

    fn update(&self, f: impl FnOnce(&mut JobStatus)) {
        f(&mut self.status.lock().unwrap());
    }
}

struct Observer<'a> {
    job: &'a Job,
}

impl CampaignObserver for Observer<'_> {
    fn on_metric(&mut self, repeat: usize, seed: u64, row: &MetricRow) {
        self.job.update(|s| {
            let p = &mut s.progress;
            p.repeat = repeat;
            p.seed = seed;
            p.episode = row.episode;
            p.loss_mean = Some(row.loss_mean);
            p.l1_error = Some(row.l1_error);
            p.records += 1;
        });
        self.job.events.lock().unwrap().push(Event {
            repeat,
            seed,
            episode: row.episode,
            loss_mean: Some(row.loss_mean),
            l1_error: row.l1_error,
            branch: Some(row.strategy_branch.clone()),
        });
    }

    fn on_am_progress(&mut self, iteration: usize, l1: f64) {
        self.job.update(|s| {
            s.progress.episode = iteration;
            s.progress.l1_error = Some(l1);
            s.progress.records += 1;
        });
        let seed = self.job.status().progress.seed;
        self.job.events.lock().unwrap().push(Event {
            repeat: 0,
            seed,
            episode: iteration,
            loss_mean: None,
            l1_error: l1,
            branch: None,
        });
    }

    fn should_stop(&self) -> bool {
        self.job.cancel.load(Ordering::Relaxed)
    }
}

fn outcome_json(outcome: &Outcome) -> serde_json::Value {
    match outcome {
        Outcome::Train(c) => json!({
            "runs": c.runs.iter().map(|r| {
                let last = r.metrics.last();
                json!({
                    "seed": r.seed,
                    "dir": r.dir,
                    "final_episode": last.map(|m| m.episode),
                    "final_l1": last.map(|m| m.l1_error),
                })
            }).collect::<Vec<_>>(),
            "summary": c.summary,
        }),
        Outcome::SampleAm(a) => json!({
            "series": a.series,
            "final_l1": a.series.last().map(|s| s.1),
        }),
        Outcome::Eval(e) => serde_json::to_value(e).unwrap_or_default(),
    }
}

/// Registry of submitted jobs. At most `limit` run at a time; the rest wait
/// in submission order.
pub struct Jobs {
    jobs: Mutex<HashMap<Uuid, Arc<Job>>>,
    order: Mutex<Vec<Uuid>>,
    slots: Arc<Semaphore>,
}

impl Jobs {
    pub fn new(limit: usize) -> Self {
        Jobs {
            jobs: Mutex::default(),
            order: Mutex::default(),
            slots: Arc::new(Semaphore::new(limit.max(1))),
        }
    }

    pub fn get(&self, id: Uuid) -> Option<Arc<Job>> {
        self.jobs.lock().unwrap().get(&id).cloned()
    }

    pub fn list(&self) -> Vec<JobStatus> {
        let jobs = self.jobs.lock().unwrap();
        self.order.lock().unwrap().iter().filter_map(|id| jobs.get(id)).map(|j| j.status()).collect()
    }

    /// Resolves and validates the request synchronously, then queues the run.
    pub fn submit(&self, req: JobRequest, mode: Option<RunMode>) -> Result<JobStatus, ApiError> {
        let cfg = prepare(&req, mode).map_err(|e| api_error(&e))?;
        let checkpoint = req.checkpoint.clone();
        if cfg.mode == RunMode::Eval && checkpoint.is_none() {
            return Err(ApiError {
                kind: ErrorKind::InvalidParameter,
                message: "eval jobs need a checkpoint".into(),
            });
        }
        let id = Uuid::new_v4();
        let job = Arc::new(Job {
            status: Mutex::new(JobStatus {
                id,
                mode: cfg.mode.to_string(),
                state: JobState::Queued,
                out: cfg.out.clone(),
                progress: Progress {
                    repeats: cfg.repeats,
                    seed: cfg.seed,
                    total_episodes: match cfg.mode {
                        RunMode::Train => cfg.train.batches,
                        RunMode::SampleAm => cfg.sample_am.iterations,
                        RunMode::Eval => 0,
                    },
                    ..Default::default()
                },
                result: None,
                error: None,
            }),
            events: Mutex::default(),
            cancel: AtomicBool::new(false),
        });
        self.jobs.lock().unwrap().insert(id, job.clone());
        self.order.lock().unwrap().push(id);
        let status = job.status();
        let slots = self.slots.clone();
        tokio::spawn(async move {
            let Ok(_permit) = slots.acquire_owned().await else {
                return;
            };
            if job.cancel.load(Ordering::Relaxed) {
                return;
            }
            job.update(|s| s.state = JobState::Running);
            tracing::info!(%id, mode = %cfg.mode, out = %cfg.out.display(), "job started");
            let worker = job.clone();
            let res = tokio::task::spawn_blocking(move || {
                let mut obs = Observer { job: &worker };
                campaign::execute(&cfg, checkpoint.as_deref(), &mut obs).map(|o| outcome_json(&o))
            })
            .await;
            job.update(|s| match res {
                Ok(Ok(v)) => {
                    s.state = JobState::Succeeded;
                    s.result = Some(v);
                }
                Ok(Err(e)) => {
                    s.state = if matches!(e, Error::Cancelled) {
                        JobState::Cancelled
                    } else {
                        JobState::Failed
                    };
                    s.error = Some(api_error(&e));
                }
                Err(join) => {
                    s.state = JobState::Failed;
                    s.error = Some(ApiError {
                        kind: ErrorKind::Internal,
                        message: join.to_string(),
                    });
                }
            });
            tracing::info!(%id, state = ?job.status().state, "job finished");
        });
        Ok(status)
    }
}

fn prepare(req: &JobRequest, mode: Option<RunMode>) -> metagfn::Result<RunConfig> {
    let mut cfg = RunConfig::parse(&req.config)?;
    cfg.apply(&req.overrides);
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let here = std::env::current_dir()?;
    let config_dir = req.config_dir.clone().unwrap_or_else(|| here.clone());
    let cwd: PathBuf = req.cwd.clone().unwrap_or(here);
    cfg.rebase(&config_dir, &cwd);
    cfg.validate()?;
    cfg.environment()?;
    Ok(cfg)
}
