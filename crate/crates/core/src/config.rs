//! Run configuration.
//!
//! A config file is TOML with one table per module. Every key is optional;
//! missing keys take the defaults of the chosen environment. [`RunConfig`] is
//! the resolved form and [`RunConfig::to_toml`] writes it back out with every
//! key present, so a run can be repeated from its echo.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::environment::{EnvKind, Environment, TorusPotential, TORUS_BETA};
use crate::error::{Error, Result};
use crate::exploration::{Strategy, Variant};
use crate::gfn::LossKind;
use crate::langevin::LangevinParams;
use crate::manifold::Space;
use crate::metadynamics::{gaussian_walkers, AdaptedMetadynamics, Kernel, MetadParams, PotentialGrids};
use crate::nn::AdamConfig;
use crate::policy::{HeadSpec, PolicyKind};
use crate::replay::DEFAULT_CAPACITY;
use crate::rng::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    Train,
    SampleAm,
    Eval,
}

impl RunMode {
    pub const NAMES: &'static str = "train, sample-am, eval";
}

impl FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(RunMode::Train),
            "sample-am" => Ok(RunMode::SampleAm),
            "eval" => Ok(RunMode::Eval),
            _ => Err(Error::UnknownName {
                kind: "mode",
                name: s.to_string(),
                expected: Self::NAMES,
            }),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Train => "train",
            RunMode::SampleAm => "sample-am",
            RunMode::Eval => "eval",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub mean_range: (f64, f64),
    pub scale_range: (f64, f64),
}

impl ModelConfig {
    pub fn head_spec(&self, env: &Environment) -> Result<HeadSpec> {
        let kind = match env.kind {
            EnvKind::Line => PolicyKind::Gauss1D,
            EnvKind::Grid => PolicyKind::Gauss2D,
            EnvKind::Torus => PolicyKind::VonMises2D,
        };
        HeadSpec::new(kind, self.mean_range, self.scale_range)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub threshold: f64,
}

/// Adapted metadynamics settings. `kernel_width` is the Gaussian σ on a box
/// and the von Mises κ on a torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmConfig {
    pub dt: f64,
    pub stride: usize,
    pub gamma: f64,
    pub beta: f64,
    pub height: f64,
    pub kernel_width: f64,
    pub epsilon: f64,
    pub spacing: f64,
    pub walker_mean: Vec<f64>,
    pub walker_position_var: f64,
    pub walker_momentum_var: f64,
}

impl AmConfig {
    fn kernel(&self, space: &Space) -> Kernel {
        let d = space.dim();
        if space.is_torus() {
            Kernel::VonMises {
                kappa: vec![self.kernel_width; d],
            }
        } else {
            Kernel::Gaussian {
                sigma: vec![self.kernel_width; d],
            }
        }
    }

    pub fn params(&self, env: &Environment) -> Result<MetadParams> {
        let p = MetadParams {
            height: self.height,
            stride: self.stride,
            kernel: self.kernel(&env.space),
            epsilon: self.epsilon,
            langevin: LangevinParams::new(self.gamma, self.beta, self.dt)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn grids(&self, env: &Environment) -> Result<PotentialGrids> {
        PotentialGrids::new(
            env.space.clone(),
            &vec![self.spacing; env.dim()],
            self.kernel(&env.space),
            self.epsilon,
            self.beta,
        )
    }

    /// Fresh sampler with `walkers` walkers. Initial states come from the
    /// `WalkerInit` stream of `seed`, Langevin noise from its `Walker` streams.
    pub fn build(&self, env: &Environment, walkers: usize, seed: u64) -> Result<AdaptedMetadynamics> {
        if self.walker_mean.len() != env.dim() {
            return Err(Error::DimensionMismatch {
                expected: env.dim(),
                got: self.walker_mean.len(),
            });
        }
        let mut init_rng = rng::stream(seed, Purpose::WalkerInit, 0);
        let states = gaussian_walkers(
            walkers,
            &env.space,
            &self.walker_mean,
            self.walker_position_var,
            self.walker_momentum_var,
            &mut init_rng,
        )?;
        AdaptedMetadynamics::new(self.grids(env)?, self.params(env)?, states, seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossKind,
    pub batch_size: usize,
    pub batches: usize,
    pub lr: f64,
    pub logz_lr: f64,
    pub adam: AdamConfig,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub checkpoint_every: usize,
    /// Record zero in the `wall_ms` column so metric files are reproducible.
    pub deterministic: bool,
    pub strategy: Strategy,
    pub replay: ReplayConfig,
    pub am: AmConfig,
}

impl TrainConfig {
    pub fn defaults(env: EnvKind) -> Self {
        let (hidden, mean_range, scale_range, threshold) = match env {
            EnvKind::Line => (256, (-14.0, 14.0), (0.1, 1.0), 1e-3),
            EnvKind::Grid => (512, (-15.0, 15.0), (0.1, 7.0), 1e-4),
            EnvKind::Torus => (512, (-PI, PI), (0.0, 5.0), 1e-10),
        };
        TrainConfig {
            model: ModelConfig {
                hidden,
                layers: 3,
                dropout: 0.2,
                mean_range,
                scale_range,
            },
            loss: LossKind::Tb,
            batch_size: 64,
            batches: 100_000,
            lr: 1e-3,
            logz_lr: 1e-1,
            adam: AdamConfig::default(),
            eval_every: 250,
            eval_samples: 10_000,
            checkpoint_every: 10_000,
            deterministic: false,
            strategy: Strategy::default_metagfn(),
            replay: ReplayConfig {
                capacity: DEFAULT_CAPACITY,
                threshold,
            },
            am: AmConfig::defaults(env),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.lr > 0.0 && self.logz_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.eval_every == 0 || self.eval_samples == 0 || self.checkpoint_every == 0 {
            return bad("evaluation and checkpoint cadences must be positive");
        }
        if !(self.adam.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if self.replay.capacity == 0 {
            return bad("replay capacity must be positive");
        }
        if self.model.hidden == 0 || self.model.layers == 0 {
            return bad("network sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        self.strategy.validate()
    }
}

impl AmConfig {
    pub fn defaults(env: EnvKind) -> Self {
        match env {
            EnvKind::Line => AmConfig {
                dt: 0.05,
                stride: 2,
                gamma: 2.0,
                beta: 1.0,
                height: 0.15,
                kernel_width: 0.1,
                epsilon: 1e-3,
                spacing: 0.01,
                walker_mean: vec![0.0],
                walker_position_var: 1.0,
                walker_momentum_var: 0.5,
            },
            EnvKind::Grid => AmConfig {
                dt: 0.35,
                stride: 3,
                gamma: 2.0,
                beta: 1.0,
                height: 0.10,
                kernel_width: 2.0,
                epsilon: 1e-4,
                spacing: 0.075,
                walker_mean: vec![0.0, 0.0],
                walker_position_var: 1.0,
                walker_momentum_var: 0.0,
            },
            EnvKind::Torus => AmConfig {
                dt: 0.01,
                stride: 2,
                gamma: 0.1,
                beta: TORUS_BETA,
                height: 1e-5,
                kernel_width: 10.0,
                epsilon: 1e-6,
                spacing: 0.1,
                walker_mean: vec![-1.2, 2.68],
                walker_position_var: 0.1,
                walker_momentum_var: 0.05,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleAmConfig {
    pub walkers: usize,
    pub iterations: usize,
    /// Implied-density error is recorded every this many iterations.
    pub record_every: usize,
}

/// Values given on the command line that replace the config file's.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub repeats: Option<usize>,
    pub batches: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: RunMode,
    pub env: EnvKind,
    /// Tabulated torus potential in the grid-dump format; synthetic if absent.
    pub torus_potential: Option<PathBuf>,
    pub seed: u64,
    pub repeats: usize,
    pub out: PathBuf,
    pub run_id: String,
    pub train: TrainConfig,
    pub sample_am: SampleAmConfig,
}

impl RunConfig {
    pub fn defaults(env: EnvKind) -> Self {
        RunConfig {
            mode: RunMode::Train,
            env,
            torus_potential: None,
            seed: 0,
            repeats: 1,
            out: PathBuf::from(format!("runs/{env}")),
            run_id: env.to_string(),
            train: TrainConfig::defaults(env),
            sample_am: SampleAmConfig {
                walkers: 64,
                iterations: 25_000,
                record_every: 500,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidParameter("repeat count must be at least 1".into()));
        }
        if self.sample_am.walkers == 0 || self.sample_am.record_every == 0 {
            return Err(Error::InvalidParameter("walker count and record cadence must be positive".into()));
        }
        if self.train.am.walker_mean.len() != self.env_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.env_dim(),
                got: self.train.am.walker_mean.len(),
            });
        }
        self.train.validate()
    }

    fn env_dim(&self) -> usize {
        match self.env {
            EnvKind::Line => 1,
            _ => 2,
        }
    }

    /// The environment this config describes, loading a tabulated torus
    /// potential if one is named.
    pub fn environment(&self) -> Result<Environment> {
        match (&self.torus_potential, self.env) {
            (Some(path), EnvKind::Torus) => Environment::torus(TorusPotential::load(path)?, TORUS_BETA),
            _ => Ok(Environment::by_kind(self.env)),
        }
    }

    /// Applies command-line overrides on top of the file's values.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(repeats) = o.repeats {
            self.repeats = repeats;
        }
        if let Some(batches) = o.batches {
            self.train.batches = batches;
        }
    }

    /// Makes relative paths absolute: the torus potential against the
    /// directory holding the config file, the output directory against the
    /// caller's working directory.
    pub fn rebase(&mut self, config_dir: &Path, cwd: &Path) {
        if let Some(p) = &self.torus_potential {
            if p.is_relative() {
                self.torus_potential = Some(config_dir.join(p));
            }
        }
        if self.out.is_relative() {
            self.out = cwd.join(&self.out);
        }
    }

    /// Seed of repeat `i`.
    pub fn repeat_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text)?;
        file.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&ConfigFile::from_resolved(self)).expect("config tables serialise")
    }
}

// File representation: every key optional.

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    exploration: ExplorationSection,
    #[serde(default)]
    replay: ReplaySection,
    #[serde(default)]
    metadynamics: MetadynamicsSection,
    #[serde(default)]
    sample_am: SampleAmSection,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    mode: Option<String>,
    env: Option<String>,
    torus_potential: Option<PathBuf>,
    seed: Option<u64>,
    repeats: Option<usize>,
    out: Option<PathBuf>,
    run_id: Option<String>,
    deterministic: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    hidden: Option<usize>,
    layers: Option<usize>,
    dropout: Option<f64>,
    mean_range: Option<(f64, f64)>,
    scale_range: Option<(f64, f64)>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    loss: Option<String>,
    stb_lambda: Option<f64>,
    batch_size: Option<usize>,
    batches: Option<usize>,
    lr: Option<f64>,
    logz_lr: Option<f64>,
    clip_norm: Option<f64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_eps: Option<f64>,
    eval_every: Option<usize>,
    eval_samples: Option<usize>,
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplorationSection {
    strategy: Option<String>,
    noise: Option<f64>,
    metagfn_noise: Option<bool>,
    thompson_heads: Option<usize>,
    thompson_p: Option<f64>,
    freq_rb: Option<usize>,
    freq_md: Option<usize>,
    variant: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplaySection {
    capacity: Option<usize>,
    threshold: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadynamicsSection {
    dt: Option<f64>,
    stride: Option<usize>,
    gamma: Option<f64>,
    beta: Option<f64>,
    height: Option<f64>,
    kernel_width: Option<f64>,
    epsilon: Option<f64>,
    spacing: Option<f64>,
    walker_mean: Option<Vec<f64>>,
    walker_position_var: Option<f64>,
    walker_momentum_var: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleAmSection {
    walkers: Option<usize>,
    iterations: Option<usize>,
    record_every: Option<usize>,
}

const DEFAULT_NOISE: f64 = 2.0;
const DEFAULT_FREQ_RB: usize = 2;
const DEFAULT_FREQ_MD: usize = 10;
const DEFAULT_HEADS: usize = 10;
const DEFAULT_P: f64 = 0.3;
const DEFAULT_LAMBDA: f64 = 0.9;

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ConfigFile {
    fn resolve(self) -> Result<RunConfig> {
        let env: EnvKind = self.run.env.as_deref().unwrap_or("line").parse()?;
        let mut c = RunConfig::defaults(env);
        if let Some(m) = self.run.mode {
            c.mode = m.parse()?;
        }
        c.torus_potential = self.run.torus_potential;
        set(&mut c.seed, self.run.seed);
        set(&mut c.repeats, self.run.repeats);
        set(&mut c.out, self.run.out);
        set(&mut c.run_id, self.run.run_id);

        let t = &mut c.train;
        set(&mut t.deterministic, self.run.deterministic);
        let m = self.model;
        set(&mut t.model.hidden, m.hidden);
        set(&mut t.model.layers, m.layers);
        set(&mut t.model.dropout, m.dropout);
        set(&mut t.model.mean_range, m.mean_range);
        set(&mut t.model.scale_range, m.scale_range);

        let tr = self.train;
        if let Some(name) = tr.loss {
            t.loss = name.parse()?;
        }
        if let (LossKind::Stb { lambda }, Some(l)) = (&mut t.loss, tr.stb_lambda) {
            *lambda = l;
        }
        set(&mut t.batch_size, tr.batch_size);
        set(&mut t.batches, tr.batches);
        set(&mut t.lr, tr.lr);
        set(&mut t.logz_lr, tr.logz_lr);
        set(&mut t.adam.clip_norm, tr.clip_norm);
        set(&mut t.adam.beta1, tr.adam_beta1);
        set(&mut t.adam.beta2, tr.adam_beta2);
        set(&mut t.adam.eps, tr.adam_eps);
        set(&mut t.eval_every, tr.eval_every);
        set(&mut t.eval_samples, tr.eval_samples);
        set(&mut t.checkpoint_every, tr.checkpoint_every);

        let ex = self.exploration;
        let freq_rb = ex.freq_rb.unwrap_or(DEFAULT_FREQ_RB);
        let noise = ex.noise.unwrap_or(DEFAULT_NOISE);
        t.strategy = match ex.strategy.as_deref().unwrap_or("metagfn") {
            "on-policy" => Strategy::OnPolicy,
            "noisy" => Strategy::Noisy { sigma0: noise, freq_rb },
            "thompson" => Strategy::Thompson {
                heads: ex.thompson_heads.unwrap_or(DEFAULT_HEADS),
                p: ex.thompson_p.unwrap_or(DEFAULT_P),
                freq_rb,
            },
            "metagfn" => Strategy::MetaGfn {
                freq_md: ex.freq_md.unwrap_or(DEFAULT_FREQ_MD),
                freq_rb,
                variant: ex.variant.as_deref().unwrap_or("always-backward-sample").parse::<Variant>()?,
                noise: ex.metagfn_noise.unwrap_or(false).then_some(noise),
            },
            other => {
                return Err(Error::UnknownName {
                    kind: "strategy",
                    name: other.to_string(),
                    expected: Strategy::NAMES,
                })
            }
        };

        set(&mut t.replay.capacity, self.replay.capacity);
        set(&mut t.replay.threshold, self.replay.threshold);

        let md = self.metadynamics;
        let a = &mut t.am;
        set(&mut a.dt, md.dt);
        set(&mut a.stride, md.stride);
        set(&mut a.gamma, md.gamma);
        set(&mut a.beta, md.beta);
        set(&mut a.height, md.height);
        set(&mut a.kernel_width, md.kernel_width);
        set(&mut a.epsilon, md.epsilon);
        set(&mut a.spacing, md.spacing);
        set(&mut a.walker_mean, md.walker_mean);
        set(&mut a.walker_position_var, md.walker_position_var);
        set(&mut a.walker_momentum_var, md.walker_momentum_var);

        set(&mut c.sample_am.walkers, self.sample_am.walkers);
        set(&mut c.sample_am.iterations, self.sample_am.iterations);
        set(&mut c.sample_am.record_every, self.sample_am.record_every);

        c.validate()?;
        Ok(c)
    }

    fn from_resolved(c: &RunConfig) -> Self {
        let t = &c.train;
        let mut ex = ExplorationSection {
            strategy: Some(t.strategy.name().to_string()),
            noise: Some(DEFAULT_NOISE),
            metagfn_noise: Some(false),
            thompson_heads: Some(DEFAULT_HEADS),
            thompson_p: Some(DEFAULT_P),
            freq_rb: Some(DEFAULT_FREQ_RB),
            freq_md: Some(DEFAULT_FREQ_MD),
            variant: Some(Variant::AlwaysBackwardSample.to_string()),
        };
        match &t.strategy {
            Strategy::OnPolicy => {}
            Strategy::Noisy { sigma0, freq_rb } => {
                ex.noise = Some(*sigma0);
                ex.freq_rb = Some(*freq_rb);
            }
            Strategy::Thompson { heads, p, freq_rb } => {
                ex.thompson_heads = Some(*heads);
                ex.thompson_p = Some(*p);
                ex.freq_rb = Some(*freq_rb);
            }
            Strategy::MetaGfn {
                freq_md,
                freq_rb,
                variant,
                noise,
            } => {
                ex.freq_md = Some(*freq_md);
                ex.freq_rb = Some(*freq_rb);
                ex.variant = Some(variant.to_string());
                ex.metagfn_noise = Some(noise.is_some());
                if let Some(n) = noise {
                    ex.noise = Some(*n);
                }
            }
        }
        let stb_lambda = match t.loss {
            LossKind::Stb { lambda } => lambda,
            _ => DEFAULT_LAMBDA,
        };
        let loss_name = match t.loss {
            LossKind::Tb => "tb",
            LossKind::Db => "db",
            LossKind::Stb { .. } => "stb",
        };
        ConfigFile {
            run: RunSection {
                mode: Some(c.mode.to_string()),
                env: Some(c.env.to_string()),
                torus_potential: c.torus_potential.clone(),
                seed: Some(c.seed),
                repeats: Some(c.repeats),
                out: Some(c.out.clone()),
                run_id: Some(c.run_id.clone()),
                deterministic: Some(t.deterministic),
            },
            model: ModelSection {
                hidden: Some(t.model.hidden),
                layers: Some(t.model.layers),
                dropout: Some(t.model.dropout),
                mean_range: Some(t.model.mean_range),
                scale_range: Some(t.model.scale_range),
            },
            train: TrainSection {
                loss: Some(loss_name.to_string()),
                stb_lambda: Some(stb_lambda),
                batch_size: Some(t.batch_size),
                batches: Some(t.batches),
                lr: Some(t.lr),
                logz_lr: Some(t.logz_lr),
                clip_norm: Some(t.adam.clip_norm),
                adam_beta1: Some(t.adam.beta1),
                adam_beta2: Some(t.adam.beta2),
                adam_eps: Some(t.adam.eps),
                eval_every: Some(t.eval_every),
                eval_samples: Some(t.eval_samples),
                checkpoint_every: Some(t.checkpoint_every),
            },
            exploration: ex,
            replay: ReplaySection {
                capacity: Some(t.replay.capacity),
                threshold: Some(t.replay.threshold),
            },
            metadynamics: MetadynamicsSection {
                dt: Some(t.am.dt),
                stride: Some(t.am.stride),
                gamma: Some(t.am.gamma),
                beta: Some(t.am.beta),
                height: Some(t.am.height),
                kernel_width: Some(t.am.kernel_width),
                epsilon: Some(t.am.epsilon),
                spacing: Some(t.am.spacing),
                walker_mean: Some(t.am.walker_mean.clone()),
                walker_position_var: Some(t.am.walker_position_var),
                walker_momentum_var: Some(t.am.walker_momentum_var),
            },
            sample_am: SampleAmSection {
                walkers: Some(c.sample_am.walkers),
                iterations: Some(c.sample_am.iterations),
                record_every: Some(c.sample_am.record_every),
            },
        }
    }
}
