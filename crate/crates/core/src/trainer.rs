//! Training loop: episode scheduling, loss, Adam steps, evaluation points
//! and checkpoints.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::evaluation::{empirical_histogram, l1_error, mode_coverage, DensityGrid};
use crate::exploration::{Branch, Explorer};
use crate::gfn::GfnModel;
use crate::nn::{lr_at, AdamState, Mode};
use crate::replay::ReplayBuffer;
use crate::rng::{self, Purpose};

/// One row of the metric file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub episode: usize,
    /// Batch loss divided by batch size, averaged over the episodes since the
    /// previous row.
    pub loss_mean: f64,
    pub l1_error: f64,
    pub wall_ms: u64,
    /// Branch taken by the episode at which the row was recorded.
    pub strategy_branch: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    pub name: String,
    pub covered: bool,
    pub mass: f64,
    pub target_mass: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub l1_error: f64,
    pub histogram: DensityGrid,
    pub basins: Vec<BasinReport>,
}

impl EvalReport {
    /// On-policy mass in the cells whose centres satisfy `pred`.
    pub fn mass_where(&self, pred: impl Fn(&[f64]) -> bool) -> f64 {
        self.histogram.mass_where(pred)
    }
}

/// Histogram of `samples` on-policy terminals, drawn in chunks with a forward
/// head chosen uniformly per sample, compared with the target density.
pub fn evaluate<R: Rng + ?Sized>(model: &GfnModel, env: &Environment, samples: usize, rng: &mut R) -> Result<EvalReport> {
    const CHUNK: usize = 2048;
    let mut terminals = Vec::with_capacity(samples);
    while terminals.len() < samples {
        let m = CHUNK.min(samples - terminals.len());
        let heads: Vec<usize> = if model.forward_heads == 1 {
            vec![0; m]
        } else {
            (0..m).map(|_| rng.random_range(0..model.forward_heads)).collect()
        };
        terminals.extend(model.sample_terminals(env, &heads, rng)?);
    }
    let spec = env.eval_spec();
    let histogram = empirical_histogram(&terminals, &spec)?;
    let target = env.target_density();
    let l1 = l1_error(&histogram, &target)?;
    let basins = env.basins();
    let covered = mode_coverage(&histogram, &basins)?;
    let basins = basins
        .into_iter()
        .zip(covered)
        .map(|(b, covered)| BasinReport {
            mass: b.cells.iter().map(|&k| histogram.mass[k]).sum(),
            target_mass: b.cells.iter().map(|&k| target.mass[k]).sum(),
            name: b.name,
            covered,
        })
        .collect();
    Ok(EvalReport {
        l1_error: l1,
        histogram,
        basins,
    })
}

/// Callbacks from a running [`Trainer`].
pub trait TrainObserver {
    fn on_metric(&mut self, _row: &MetricRow) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _ckpt: &Checkpoint) -> Result<()> {
        Ok(())
    }
    /// Checked before every episode; returning true aborts with
    /// [`Error::Cancelled`].
    fn should_stop(&self) -> bool {
        false
    }
}

impl TrainObserver for () {}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub episode: usize,
    pub branch: Branch,
    /// Sum of the loss over the included (trajectory, head) pairs.
    pub loss_sum: f64,
    pub pairs: usize,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub env: Environment,
    pub seed: u64,
    pub model: GfnModel,
    pub adam: AdamState,
    pub explorer: Explorer,
    /// Episodes completed.
    pub episode: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, env: Environment, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let head = cfg.model.head_spec(&env)?;
        let mut init = rng::stream(seed, Purpose::ModelInit, 0);
        let mut model = GfnModel::new(
            &env,
            head,
            cfg.model.hidden,
            cfg.model.layers,
            cfg.model.dropout,
            cfg.strategy.forward_heads(),
            &mut init,
        )?;
        model.mlp.mode = Mode::Train;
        let mut shapes: Vec<usize> = model.mlp.param_slices().iter().map(|s| s.len()).collect();
        shapes.push(1);
        let adam = AdamState::new(cfg.adam.clone(), &shapes);
        let am = if cfg.strategy.uses_metadynamics() {
            Some(cfg.am.build(&env, cfg.batch_size, seed)?)
        } else {
            None
        };
        let buffer = ReplayBuffer::new(cfg.replay.capacity, cfg.replay.threshold)?;
        let explorer = Explorer::new(cfg.strategy.clone(), buffer, am, cfg.batch_size, cfg.batches)?;
        Ok(Trainer {
            cfg: cfg.clone(),
            env,
            seed,
            model,
            adam,
            explorer,
            episode: 0,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            episode: self.episode,
            seed: self.seed,
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Runs the next episode: one batch from the strategy, the summed loss and
    /// one Adam step with the scheduled learning rates.
    pub fn step(&mut self) -> Result<StepInfo> {
        let j = self.episode + 1;
        let mut rng = rng::stream(self.seed, Purpose::Episode, j as u64);
        // a diverged network shows up first as a non-finite rollout density
        let batch = self
            .explorer
            .next_batch(&self.model, &self.env, j, &mut rng)
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFiniteLoss {
                    episode: j,
                    detail: format!("non-finite {what} while sampling the batch"),
                },
                e => e,
            })?;
        let pairs = self.explorer.loss_pairs(&batch, &mut rng);
        let (losses, grads) = self
            .model
            .loss_and_grad(&self.env, &batch.trajectories, &pairs, self.cfg.loss, &mut rng)
            .map_err(|e| match e {
                Error::NonFiniteTrajectory { index, head, dump } => Error::NonFiniteLoss {
                    episode: j,
                    detail: format!("trajectory {index}, head {head}, branch {}: {dump}", batch.branch),
                },
                e => e,
            })?;
        let lr = lr_at(j, self.cfg.batches, self.cfg.lr);
        let lr_z = lr_at(j, self.cfg.batches, self.cfg.logz_lr);
        let mut grad_slices = grads.mlp.slices();
        let gz = [grads.log_z];
        grad_slices.push(&gz);
        let mut lrs = vec![lr; grad_slices.len()];
        *lrs.last_mut().expect("non-empty") = lr_z;
        let GfnModel { mlp, log_z, .. } = &mut self.model;
        let mut params = mlp.param_slices_mut();
        params.push(std::slice::from_mut(log_z));
        self.adam.step(&mut params, &grad_slices, &lrs).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFiniteLoss {
                episode: j,
                detail: format!("non-finite {what} on branch {}", batch.branch),
            },
            e => e,
        })?;
        self.episode = j;
        Ok(StepInfo {
            episode: j,
            branch: batch.branch,
            loss_sum: losses.iter().sum(),
            pairs: pairs.len(),
        })
    }

    pub fn evaluate(&self, samples: usize, index: u64) -> Result<EvalReport> {
        let mut rng = rng::stream(self.seed, Purpose::Evaluation, index);
        evaluate(&self.model, &self.env, samples, &mut rng)
    }

    /// Runs the remaining episodes, recording a metric row every
    /// `eval_every` episodes and after the last one, and a checkpoint every
    /// `checkpoint_every` episodes and after the last one. With zero
    /// episodes only the initial checkpoint is emitted.
    pub fn run(&mut self, obs: &mut dyn TrainObserver) -> Result<Vec<MetricRow>> {
        let total = self.cfg.batches;
        let mut rows = Vec::new();
        if total == 0 {
            obs.on_checkpoint(&self.checkpoint())?;
            return Ok(rows);
        }
        let start = Instant::now();
        let mut loss_acc = 0.0;
        let mut loss_n = 0usize;
        while self.episode < total {
            if obs.should_stop() {
                return Err(Error::Cancelled);
            }
            let info = self.step()?;
            let j = info.episode;
            loss_acc += info.loss_sum / self.cfg.batch_size as f64;
            loss_n += 1;
            if j % self.cfg.eval_every == 0 || j == total {
                let report = self.evaluate(self.cfg.eval_samples, j as u64)?;
                let row = MetricRow {
                    episode: j,
                    loss_mean: loss_acc / loss_n as f64,
                    l1_error: report.l1_error,
                    wall_ms: if self.cfg.deterministic {
                        0
                    } else {
                        start.elapsed().as_millis() as u64
                    },
                    strategy_branch: info.branch.label().to_string(),
                };
                log::info!(
                    "episode {j}/{total}: loss {:.4} l1 {:.4} ({})",
                    row.loss_mean,
                    row.l1_error,
                    row.strategy_branch
                );
                obs.on_metric(&row)?;
                rows.push(row);
                loss_acc = 0.0;
                loss_n = 0;
            }
            if j % self.cfg.checkpoint_every == 0 || j == total {
                obs.on_checkpoint(&self.checkpoint())?;
            }
        }
        Ok(rows)
    }
}

/// Writes metric rows as CSV with a header.
pub fn write_metrics<W: std::io::Write>(rows: &[MetricRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics<R: std::io::Read>(r: R) -> Result<Vec<MetricRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}
