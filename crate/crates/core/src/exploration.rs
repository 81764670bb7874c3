//! Trajectory sources: on-policy, noisy, Thompson ensemble and MetaGFN.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::gfn::{GfnModel, Trajectory};
use crate::metadynamics::AdaptedMetadynamics;
use crate::policy::noise_schedule;
use crate::replay::{ReplayBuffer, ReplayItem};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Store terminals only and rebuild trajectories with the current
    /// backward policy on every draw.
    AlwaysBackwardSample,
    /// Store the trajectory built when the terminal was first sampled.
    ReuseInitial,
}

impl Variant {
    pub const NAMES: &'static str = "always-backward-sample, reuse-initial";
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "always-backward-sample" => Ok(Variant::AlwaysBackwardSample),
            "reuse-initial" => Ok(Variant::ReuseInitial),
            _ => Err(Error::UnknownName {
                kind: "replay variant",
                name: s.to_string(),
                expected: Self::NAMES,
            }),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::AlwaysBackwardSample => "always-backward-sample",
            Variant::ReuseInitial => "reuse-initial",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    OnPolicy,
    Noisy {
        sigma0: f64,
        freq_rb: usize,
    },
    Thompson {
        heads: usize,
        p: f64,
        freq_rb: usize,
    },
    MetaGfn {
        freq_md: usize,
        freq_rb: usize,
        variant: Variant,
        /// Initial exploration noise, if the noisy variant is used.
        noise: Option<f64>,
    },
}

impl Strategy {
    pub const NAMES: &'static str = "on-policy, noisy, thompson, metagfn";

    pub fn default_metagfn() -> Self {
        Strategy::MetaGfn {
            freq_md: 10,
            freq_rb: 2,
            variant: Variant::AlwaysBackwardSample,
            noise: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::OnPolicy => "on-policy",
            Strategy::Noisy { .. } => "noisy",
            Strategy::Thompson { .. } => "thompson",
            Strategy::MetaGfn { .. } => "metagfn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match *self {
            Strategy::OnPolicy => Ok(()),
            Strategy::Noisy { sigma0, freq_rb } => {
                if !(sigma0 >= 0.0 && sigma0.is_finite()) {
                    return bad("noise must be non-negative");
                }
                if freq_rb == 0 {
                    return bad("freq_rb must be at least 1");
                }
                Ok(())
            }
            Strategy::Thompson { heads, p, freq_rb } => {
                if heads == 0 {
                    return bad("Thompson sampling needs at least one head");
                }
                if !(p > 0.0 && p <= 1.0) {
                    return bad("inclusion probability must lie in (0, 1]");
                }
                if freq_rb == 0 {
                    return bad("freq_rb must be at least 1");
                }
                Ok(())
            }
            Strategy::MetaGfn {
                freq_md, freq_rb, noise, ..
            } => {
                if freq_md == 0 || freq_rb == 0 {
                    return bad("freq_md and freq_rb must be at least 1");
                }
                if let Some(n) = noise {
                    if !(n >= 0.0 && n.is_finite()) {
                        return bad("noise must be non-negative");
                    }
                }
                Ok(())
            }
        }
    }

    /// Forward heads the model needs.
    pub fn forward_heads(&self) -> usize {
        match self {
            Strategy::Thompson { heads, .. } => *heads,
            _ => 1,
        }
    }

    pub fn uses_metadynamics(&self) -> bool {
        matches!(self, Strategy::MetaGfn { .. })
    }

    /// Branch taken at `episode` when the replay buffer is non-empty.
    pub fn branch(&self, episode: usize) -> Branch {
        match *self {
            Strategy::OnPolicy => Branch::OnPolicy,
            Strategy::Noisy { freq_rb, .. } => {
                if episode.is_multiple_of(freq_rb) {
                    Branch::Replay
                } else {
                    Branch::Noisy
                }
            }
            Strategy::Thompson { freq_rb, .. } => {
                if episode.is_multiple_of(freq_rb) {
                    Branch::Replay
                } else {
                    Branch::Thompson
                }
            }
            Strategy::MetaGfn { freq_md, freq_rb, .. } => {
                if episode.is_multiple_of(freq_md) {
                    Branch::Metadynamics
                } else if episode.is_multiple_of(freq_rb) {
                    Branch::Replay
                } else {
                    Branch::OnPolicy
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    OnPolicy,
    Noisy,
    Thompson,
    Replay,
    Metadynamics,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::OnPolicy => "on_policy",
            Branch::Noisy => "noisy",
            Branch::Thompson => "thompson",
            Branch::Replay => "replay",
            Branch::Metadynamics => "metadynamics",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub branch: Branch,
    pub trajectories: Vec<Trajectory>,
}

/// Rollouts with heads drawn uniformly from the model's forward heads; each
/// trajectory records the head that produced it.
pub fn thompson_generate<R: Rng + ?Sized>(
    model: &GfnModel,
    env: &Environment,
    b: usize,
    noise: f64,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let heads: Vec<usize> = (0..b).map(|_| rng.random_range(0..model.forward_heads)).collect();
    model.rollout(env, &heads, noise, rng)
}

/// (trajectory, head) pairs entering the loss: every head for every
/// trajectory, each kept with probability `p` by an independent coin flip,
/// in trajectory-major order.
pub fn thompson_pairs<R: Rng + ?Sized>(n_traj: usize, heads: usize, p: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..n_traj {
        for k in 0..heads {
            if p >= 1.0 || rng.random::<f64>() < p {
                pairs.push((i, k));
            }
        }
    }
    pairs
}

/// Mutable exploration state owned by one training run.
#[derive(Clone, Debug)]
pub struct Explorer {
    pub strategy: Strategy,
    pub buffer: ReplayBuffer,
    pub am: Option<AdaptedMetadynamics>,
    pub batch_size: usize,
    pub total_batches: usize,
}

impl Explorer {
    pub fn new(
        strategy: Strategy,
        buffer: ReplayBuffer,
        am: Option<AdaptedMetadynamics>,
        batch_size: usize,
        total_batches: usize,
    ) -> Result<Self> {
        strategy.validate()?;
        if strategy.uses_metadynamics() && am.is_none() {
            return Err(Error::InvalidParameter("MetaGFN needs a metadynamics sampler".into()));
        }
        if let Some(am) = &am {
            if am.walkers.len() != batch_size {
                return Err(Error::InvalidParameter(format!(
                    "{} walkers for batch size {batch_size}",
                    am.walkers.len()
                )));
            }
        }
        Ok(Explorer {
            strategy,
            buffer,
            am,
            batch_size,
            total_batches,
        })
    }

    fn noise_at(&self, episode: usize) -> f64 {
        match self.strategy {
            Strategy::Noisy { sigma0, .. } => noise_schedule(episode, self.total_batches, sigma0),
            Strategy::MetaGfn { noise: Some(s0), .. } => noise_schedule(episode, self.total_batches, s0),
            _ => 0.0,
        }
    }

    fn store_rollouts(&mut self, env: &Environment, trajs: &[Trajectory]) {
        for tr in trajs {
            let terminal = tr.terminal().to_vec();
            self.buffer.push(ReplayItem {
                reward: env.reward(&terminal),
                terminal,
                trajectory: Some(tr.clone()),
            });
        }
    }

    /// The `b` trajectories for `episode` (numbered from 1).
    pub fn next_batch<R: Rng + ?Sized>(
        &mut self,
        model: &GfnModel,
        env: &Environment,
        episode: usize,
        rng: &mut R,
    ) -> Result<Batch> {
        let b = self.batch_size;
        let noise = self.noise_at(episode);
        let mut branch = self.strategy.branch(episode);
        if branch == Branch::Replay && self.buffer.is_empty() {
            log::debug!("episode {episode}: replay buffer empty, falling back to on-policy");
            branch = match self.strategy {
                Strategy::Noisy { .. } => Branch::Noisy,
                Strategy::Thompson { .. } => Branch::Thompson,
                _ => Branch::OnPolicy,
            };
        }
        let trajectories = match branch {
            Branch::OnPolicy => model.rollout(env, &vec![0; b], noise, rng)?,
            Branch::Noisy => {
                let t = model.rollout(env, &vec![0; b], noise, rng)?;
                self.store_rollouts(env, &t);
                t
            }
            Branch::Thompson => {
                let t = thompson_generate(model, env, b, noise, rng)?;
                self.store_rollouts(env, &t);
                t
            }
            Branch::Metadynamics => self.metadynamics_batch(model, env, noise, rng)?,
            Branch::Replay => self.replay_batch(model, env, noise, rng)?,
        };
        Ok(Batch { branch, trajectories })
    }

    fn metadynamics_batch<R: Rng + ?Sized>(
        &mut self,
        model: &GfnModel,
        env: &Environment,
        noise: f64,
        rng: &mut R,
    ) -> Result<Vec<Trajectory>> {
        let reuse = matches!(
            self.strategy,
            Strategy::MetaGfn {
                variant: Variant::ReuseInitial,
                ..
            }
        );
        let am = self.am.as_mut().expect("checked at construction");
        let steps = am.params.stride;
        am.run(env, steps)?;
        let terminals = am.positions();
        let trajs = model.backward_sample(env, &terminals, noise, rng)?;
        for (x, tr) in terminals.into_iter().zip(&trajs) {
            self.buffer.push(ReplayItem {
                reward: env.reward(&x),
                terminal: x,
                trajectory: reuse.then(|| tr.clone()),
            });
        }
        Ok(trajs)
    }

    fn replay_batch<R: Rng + ?Sized>(
        &mut self,
        model: &GfnModel,
        env: &Environment,
        noise: f64,
        rng: &mut R,
    ) -> Result<Vec<Trajectory>> {
        let picks = self.buffer.sample_biased(self.batch_size, rng)?;
        let regenerate = matches!(
            self.strategy,
            Strategy::MetaGfn {
                variant: Variant::AlwaysBackwardSample,
                ..
            }
        );
        if regenerate || picks.iter().any(|p| p.trajectory.is_none()) {
            let terminals: Vec<Vec<f64>> = picks.iter().map(|p| p.terminal.clone()).collect();
            model.backward_sample(env, &terminals, noise, rng)
        } else {
            Ok(picks
                .into_iter()
                .map(|p| p.trajectory.clone().expect("checked above"))
                .collect())
        }
    }

    /// (trajectory, head) pairs for the loss of `batch`.
    pub fn loss_pairs<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Vec<(usize, usize)> {
        match self.strategy {
            Strategy::Thompson { heads, p, .. } => thompson_pairs(batch.trajectories.len(), heads, p, rng),
            _ => (0..batch.trajectories.len()).map(|i| (i, 0)).collect(),
        }
    }
}
