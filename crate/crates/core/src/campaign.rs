//! Multi-seed experiment runs and their on-disk artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! effective-config.toml          resolved configuration
//! summary.csv                    mean and standard error per eval point (train)
//! seed-<s>/metrics.csv           one row per eval point
//! seed-<s>/checkpoint-<j>.txt    model and optimizer state after episode j
//! seed-<s>/abort.txt             diagnostic when a run hits a non-finite loss
//! potential-grids.txt            grid dump of the sampler state (sample-am)
//! am-l1.csv                      implied-density error series (sample-am)
//! eval-histogram.txt             on-policy histogram as a grid dump (eval)
//! eval-report.toml               L1 error and per-basin coverage (eval)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, RunMode};
use crate::error::{Error, Result};
use crate::evaluation::l1_error;
use crate::metadynamics::PotentialGrids;
use crate::rng::{self, Purpose};
use crate::trainer::{evaluate, write_metrics, BasinReport, MetricRow, TrainObserver, Trainer};

pub const CONFIG_ECHO: &str = "effective-config.toml";

/// Progress callbacks for a whole campaign.
pub trait CampaignObserver {
    fn on_metric(&mut self, _repeat: usize, _seed: u64, _row: &MetricRow) {}
    fn on_am_progress(&mut self, _iteration: usize, _l1: f64) {}
    fn should_stop(&self) -> bool {
        false
    }
}

impl CampaignObserver for () {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub episode: usize,
    pub runs: usize,
    pub l1_mean: f64,
    pub l1_se: f64,
    pub loss_mean: f64,
    pub loss_se: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error across runs at every episode present in all of
/// them.
pub fn summarize(runs: &[Vec<MetricRow>]) -> Vec<SummaryRow> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    first
        .iter()
        .filter_map(|row| {
            let at: Vec<&MetricRow> = runs
                .iter()
                .filter_map(|r| r.iter().find(|x| x.episode == row.episode))
                .collect();
            (at.len() == runs.len()).then(|| {
                let (l1_mean, l1_se) = mean_se(&at.iter().map(|r| r.l1_error).collect::<Vec<_>>());
                let (loss_mean, loss_se) = mean_se(&at.iter().map(|r| r.loss_mean).collect::<Vec<_>>());
                SummaryRow {
                    episode: row.episode,
                    runs: at.len(),
                    l1_mean,
                    l1_se,
                    loss_mean,
                    loss_se,
                }
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Vec<MetricRow>,
}

#[derive(Clone, Debug)]
pub struct TrainCampaign {
    pub runs: Vec<SeedRun>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Clone, Debug)]
pub struct AmCampaign {
    /// `(iteration, L1 of the implied density)`.
    pub series: Vec<(usize, f64)>,
    pub grids: PotentialGrids,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub env: String,
    pub checkpoint_episode: usize,
    pub samples: usize,
    pub l1_error: f64,
    pub modes_covered: usize,
    pub basins: Vec<BasinReport>,
}

#[derive(Debug)]
pub enum Outcome {
    Train(TrainCampaign),
    SampleAm(AmCampaign),
    Eval(EvalSummary),
}

fn write_echo(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(CONFIG_ECHO), cfg.to_toml())?;
    Ok(())
}

/// Runs `cfg` in its configured mode. Eval mode needs `checkpoint`.
pub fn execute(cfg: &RunConfig, checkpoint: Option<&Path>, obs: &mut dyn CampaignObserver) -> Result<Outcome> {
    match cfg.mode {
        RunMode::Train => train(cfg, obs).map(Outcome::Train),
        RunMode::SampleAm => sample_am(cfg, obs).map(Outcome::SampleAm),
        RunMode::Eval => {
            let path = checkpoint.ok_or_else(|| Error::InvalidParameter("eval mode needs a checkpoint".into()))?;
            eval(cfg, path).map(Outcome::Eval)
        }
    }
}

struct SeedWriter<'a> {
    dir: PathBuf,
    repeat: usize,
    seed: u64,
    rows: Vec<MetricRow>,
    obs: &'a mut dyn CampaignObserver,
}

impl TrainObserver for SeedWriter<'_> {
    fn on_metric(&mut self, row: &MetricRow) -> Result<()> {
        self.rows.push(row.clone());
        write_metrics(&self.rows, fs::File::create(self.dir.join("metrics.csv"))?)?;
        self.obs.on_metric(self.repeat, self.seed, row);
        Ok(())
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.save(self.dir.join(format!("checkpoint-{:07}.txt", ckpt.episode)))
    }

    fn should_stop(&self) -> bool {
        self.obs.should_stop()
    }
}

/// Trains one model per repeat (seeds `seed`, `seed + 1`, ...) and writes the
/// per-seed metrics, checkpoints and the campaign summary.
pub fn train(cfg: &RunConfig, obs: &mut dyn CampaignObserver) -> Result<TrainCampaign> {
    cfg.validate()?;
    let env = cfg.environment()?;
    write_echo(cfg)?;
    let mut runs = Vec::with_capacity(cfg.repeats);
    for i in 0..cfg.repeats {
        let seed = cfg.repeat_seed(i);
        let dir = cfg.out.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        let mut trainer = Trainer::new(&cfg.train, env.clone(), seed)?;
        let mut w = SeedWriter {
            dir: dir.clone(),
            repeat: i,
            seed,
            rows: Vec::new(),
            obs: &mut *obs,
        };
        match trainer.run(&mut w) {
            Ok(_) => {}
            Err(e @ Error::NonFiniteLoss { .. }) => {
                fs::write(dir.join("abort.txt"), format!("{e}\n"))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        // an empty run still gets a metric file with its header
        if w.rows.is_empty() {
            fs::write(dir.join("metrics.csv"), "episode,loss_mean,l1_error,wall_ms,strategy_branch\n")?;
        }
        runs.push(SeedRun {
            seed,
            dir,
            metrics: w.rows,
        });
    }
    let summary = summarize(&runs.iter().map(|r| r.metrics.clone()).collect::<Vec<_>>());
    let mut out = csv::Writer::from_path(cfg.out.join("summary.csv"))?;
    for row in &summary {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(TrainCampaign { runs, summary })
}

/// Adapted metadynamics alone: `iterations` Langevin steps of
/// `sample_am.walkers` walkers, recording the implied-density error against
/// the reward every `record_every` steps and at the end.
pub fn sample_am(cfg: &RunConfig, obs: &mut dyn CampaignObserver) -> Result<AmCampaign> {
    cfg.validate()?;
    let env = cfg.environment()?;
    write_echo(cfg)?;
    let mut am = cfg.train.am.build(&env, cfg.sample_am.walkers, cfg.seed)?;
    let reference = am.grids.reference_density(|z| env.reward(z))?;
    let mut series = Vec::new();
    let total = cfg.sample_am.iterations;
    for it in 1..=total {
        if obs.should_stop() {
            return Err(Error::Cancelled);
        }
        am.step(&env)?;
        if it % cfg.sample_am.record_every == 0 || it == total {
            let l1 = l1_error(&am.grids.implied_density(), &reference)?;
            obs.on_am_progress(it, l1);
            series.push((it, l1));
        }
    }
    am.grids.to_dump().save(cfg.out.join("potential-grids.txt"))?;
    let mut out = csv::Writer::from_path(cfg.out.join("am-l1.csv"))?;
    out.write_record(["iteration", "l1_error"])?;
    for (it, l1) in &series {
        out.write_record([it.to_string(), l1.to_string()])?;
    }
    out.flush()?;
    Ok(AmCampaign {
        series,
        grids: am.grids,
    })
}

/// Index of the evaluation stream used for standalone checkpoint evaluation,
/// distinct from the per-episode indices used during training.
const EVAL_STREAM: u64 = (1 << 48) - 1;

/// Loads a checkpoint, draws `eval_samples` on-policy terminals and reports
/// the L1 error and mode coverage.
pub fn eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalSummary> {
    cfg.validate()?;
    let env = cfg.environment()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let expected = cfg.train.model.head_spec(&env)?;
    if ckpt.model.head.kind != expected.kind || ckpt.model.mlp.input_dim() != env.input_dim() {
        return Err(Error::InvalidParameter(format!(
            "checkpoint does not belong to the {} environment",
            cfg.env
        )));
    }
    write_echo(cfg)?;
    let mut rng = rng::stream(ckpt.seed, Purpose::Evaluation, EVAL_STREAM);
    let report = evaluate(&ckpt.model, &env, cfg.train.eval_samples, &mut rng)?;
    report.histogram.to_dump("histogram").save(cfg.out.join("eval-histogram.txt"))?;
    let summary = EvalSummary {
        env: cfg.env.to_string(),
        checkpoint_episode: ckpt.episode,
        samples: cfg.train.eval_samples,
        l1_error: report.l1_error,
        modes_covered: report.basins.iter().filter(|b| b.covered).count(),
        basins: report.basins,
    };
    let text = toml::to_string(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(cfg.out.join("eval-report.toml"), text)?;
    Ok(summary)
}
