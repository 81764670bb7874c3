//! Benchmark environments: a bimodal-plus-distant-peak line, four Gaussians on
//! a square, and a Boltzmann weight on the 2-torus.
//!
//! Every environment has a three-step horizon, a fixed source state, an
//! identity collective variable and an evaluation grid of cells on which
//! target and empirical distributions are compared.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dump::GridDump;
use crate::error::{Error, Result};
use crate::evaluation::{descent_basins, Basin, DensityGrid};
use crate::grid::{GridSpec, Layout};
use crate::manifold::Space;
use crate::metadynamics::Landscape;

pub const HORIZON: usize = 3;
pub const LOG_REWARD_FLOOR: f64 = -10.0;

/// Inverse temperature of the torus Boltzmann weight.
pub const TORUS_BETA: f64 = 0.4009;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Line,
    Grid,
    Torus,
}

impl EnvKind {
    pub const NAMES: &'static str = "line, grid, torus";
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(EnvKind::Line),
            "grid" => Ok(EnvKind::Grid),
            "torus" => Ok(EnvKind::Torus),
            _ => Err(Error::UnknownName {
                kind: "environment",
                name: s.to_string(),
                expected: EnvKind::NAMES,
            }),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Line => "line",
            EnvKind::Grid => "grid",
            EnvKind::Torus => "torus",
        })
    }
}

/// One well of the synthetic torus potential,
/// `−depth · exp(κ(cos(φ−φ₀)−1) + κ(cos(ψ−ψ₀)−1))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Well {
    pub name: String,
    pub center: [f64; 2],
    pub depth: f64,
    pub kappa: f64,
}

/// Six wells placed at the usual backbone-dihedral metastable states, listed
/// from deepest to shallowest. Depths are in kJ/mol.
pub fn default_wells() -> Vec<Well> {
    let w = |name: &str, phi: f64, psi: f64, depth: f64| Well {
        name: name.to_string(),
        center: [phi, psi],
        depth,
        kappa: 8.0,
    };
    vec![
        w("P_par", -1.2, 2.68, 20.0),
        w("alpha_R", -1.4, -0.7, 18.5),
        w("C5", -2.7, 2.9, 17.0),
        w("alpha_prime", -2.8, -0.6, 14.0),
        w("alpha_L", 1.0, 0.6, 11.0),
        w("alpha_D", 1.2, -2.3, 8.0),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub enum TorusPotential {
    Synthetic(Vec<Well>),
    /// Values on a periodic grid, read by multilinear interpolation.
    Tabulated { spec: GridSpec, values: Vec<f64> },
}

impl TorusPotential {
    /// Reads the first section of a grid dump over the 2-torus.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_dump(&GridDump::load(path)?)
    }

    pub fn from_dump(d: &GridDump) -> Result<Self> {
        if d.spec.space != (Space::Torus { dim: 2 }) {
            return Err(Error::InvalidParameter("torus potential must live on the 2-torus".into()));
        }
        let (_, values) = d
            .sections
            .first()
            .ok_or_else(|| Error::Parse("potential dump has no sections".into()))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tabulated potential"));
        }
        Ok(TorusPotential::Tabulated {
            spec: d.spec.clone(),
            values: values.clone(),
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TorusPotential::Synthetic(wells) => -wells
                .iter()
                .map(|w| {
                    w.depth
                        * (w.kappa * ((x[0] - w.center[0]).cos() - 1.0)
                            + w.kappa * ((x[1] - w.center[1]).cos() - 1.0))
                            .exp()
                })
                .sum::<f64>(),
            TorusPotential::Tabulated { spec, values } => spec
                .interpolate(values, x)
                .expect("torus interpolation accepts every point"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Reward {
    Line,
    Grid,
    Torus {
        potential: TorusPotential,
        beta: f64,
        /// Minimum of the potential, so that the peak reward is about one.
        offset: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub kind: EnvKind,
    /// Terminal manifold; adapted metadynamics walkers reflect off its walls.
    pub space: Space,
    pub source: Vec<f64>,
    pub horizon: usize,
    pub eval_spacing: Vec<f64>,
    reward: Reward,
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (TAU * var).sqrt()
}

impl Environment {
    pub fn line() -> Self {
        Environment {
            kind: EnvKind::Line,
            space: Space::interval(-5.0, 23.0).expect("valid interval"),
            source: vec![0.0],
            horizon: HORIZON,
            eval_spacing: vec![0.01],
            reward: Reward::Line,
        }
    }

    pub fn grid() -> Self {
        Environment {
            kind: EnvKind::Grid,
            space: Space::bounded_box(vec![-15.0, -15.0], vec![15.0, 15.0]).expect("valid box"),
            source: vec![0.0, 0.0],
            horizon: HORIZON,
            eval_spacing: vec![0.075, 0.075],
            reward: Reward::Grid,
        }
    }

    pub fn torus(potential: TorusPotential, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        let offset = match &potential {
            TorusPotential::Tabulated { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
            TorusPotential::Synthetic(wells) => {
                if wells.is_empty() {
                    return Err(Error::Empty("well list"));
                }
                let probe = GridSpec::new(Space::torus(2)?, Layout::Nodes, &[0.01, 0.01])?;
                let mut m = f64::INFINITY;
                for w in wells {
                    m = m.min(potential.value(&w.center));
                }
                for k in 0..probe.len() {
                    m = m.min(potential.value(&probe.point(k)));
                }
                m
            }
        };
        Ok(Environment {
            kind: EnvKind::Torus,
            space: Space::torus(2)?,
            source: vec![-1.2, 2.68],
            horizon: HORIZON,
            eval_spacing: vec![0.1, 0.1],
            reward: Reward::Torus { potential, beta, offset },
        })
    }

    pub fn synthetic_torus() -> Self {
        Self::torus(TorusPotential::Synthetic(default_wells()), TORUS_BETA).expect("default wells are valid")
    }

    /// Default instance of each kind; the torus uses the synthetic potential.
    pub fn by_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Line => Self::line(),
            EnvKind::Grid => Self::grid(),
            EnvKind::Torus => Self::synthetic_torus(),
        }
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn reward(&self, x: &[f64]) -> f64 {
        match &self.reward {
            Reward::Line => {
                let v = x[0];
                if !(-5.0..=23.0).contains(&v) {
                    return 0.0;
                }
                normal_pdf(v, -2.0, 1.0) + normal_pdf(v, -2.0, 0.4) + normal_pdf(v, 2.0, 0.6) + normal_pdf(v, 20.0, 0.1)
            }
            Reward::Grid => {
                if !x.iter().all(|v| (-15.0..=15.0).contains(v)) {
                    return 0.0;
                }
                [(-7.0, -7.0), (-7.0, 7.0), (7.0, 7.0), (7.0, -7.0)]
                    .iter()
                    .map(|&(a, b)| ((-(x[0] - a).powi(2) - (x[1] - b).powi(2)) / 4.0).exp() / (4.0 * PI))
                    .sum()
            }
            Reward::Torus { potential, beta, offset } => (-beta * (potential.value(x) - offset)).exp(),
        }
    }

    /// `max(log r(x), −10)`.
    pub fn log_reward_clipped(&self, x: &[f64]) -> f64 {
        let r = self.reward(x);
        if r > 0.0 {
            r.ln().max(LOG_REWARD_FLOOR)
        } else {
            LOG_REWARD_FLOOR
        }
    }

    /// Potential whose local minima mark the modes: the torus potential
    /// itself, or `−r` elsewhere.
    pub fn mode_potential(&self, x: &[f64]) -> f64 {
        match &self.reward {
            Reward::Torus { potential, .. } => potential.value(x),
            _ => -self.reward(x),
        }
    }

    /// Cell grid on which distributions are compared.
    pub fn eval_spec(&self) -> GridSpec {
        GridSpec::new(self.space.clone(), Layout::Cells, &self.eval_spacing).expect("environment grid is valid")
    }

    /// Reward at the cell centres of [`Self::eval_spec`], normalised by the
    /// discrete sum.
    pub fn target_density(&self) -> DensityGrid {
        let spec = self.eval_spec();
        let vals = (0..spec.len()).map(|k| self.reward(&spec.point(k))).collect();
        DensityGrid::from_unnormalized(spec, vals).expect("rewards are non-negative with positive mass")
    }

    /// Basins of attraction of the modes on the evaluation grid, deepest
    /// first. Synthetic torus basins carry the name of the nearest well.
    pub fn basins(&self) -> Vec<Basin> {
        let spec = self.eval_spec();
        let pot: Vec<f64> = (0..spec.len()).map(|k| self.mode_potential(&spec.point(k))).collect();
        descent_basins(&spec, &pot)
            .into_iter()
            .enumerate()
            .map(|(i, (min, cells))| {
                let at = spec.point(min);
                let name = match &self.reward {
                    Reward::Torus {
                        potential: TorusPotential::Synthetic(wells),
                        ..
                    } => wells
                        .iter()
                        .min_by(|a, b| {
                            let da = self.space.displacement(&at, &a.center).expect("2-d");
                            let db = self.space.displacement(&at, &b.center).expect("2-d");
                            let na: f64 = da.iter().map(|v| v * v).sum();
                            let nb: f64 = db.iter().map(|v| v * v).sum();
                            na.total_cmp(&nb)
                        })
                        .map(|w| w.name.clone())
                        .unwrap_or_else(|| format!("mode{i}")),
                    _ => at.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(","),
                };
                Basin { name, cells }
            })
            .collect()
    }

    /// Width of the network input for one state.
    pub fn input_dim(&self) -> usize {
        let spatial = if self.space.is_torus() { 2 * self.dim() } else { self.dim() };
        spatial + self.horizon + 1
    }

    /// Network input for position `x` at step `t`: scaled coordinates (box)
    /// or `(cos, sin)` pairs (torus), followed by a one-hot of `t`.
    pub fn encode_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let mut o = 0;
        if self.space.is_torus() {
            for &v in x {
                out[o] = v.cos();
                out[o + 1] = v.sin();
                o += 2;
            }
        } else {
            for (i, &v) in x.iter().enumerate() {
                let (lo, hi) = self.space.bounds(i);
                out[o] = (2.0 * v - (lo + hi)) / (hi - lo);
                o += 1;
            }
        }
        for j in 0..=self.horizon {
            out[o + j] = if j == t { 1.0 } else { 0.0 };
        }
    }
}

impl Landscape for Environment {
    fn walker_space(&self) -> &Space {
        &self.space
    }

    fn reward(&self, x: &[f64]) -> f64 {
        Environment::reward(self, x)
    }

    fn cv(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn cv_jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..x.len())
            .map(|a| (0..x.len()).map(|i| if a == i { 1.0 } else { 0.0 }).collect())
            .collect()
    }
}
