//! Adapted metadynamics.
//!
//! Two kernel density estimates are accumulated on a grid over the collective
//! variable (CV) space: `n_hat` counts visits and `r_hat` sums the rewards of
//! the visited states. Their regularised log-ratio
//!
//! ```text
//! v_hat = −(1/β) · log(r_hat / (n_hat + ε) + ε)
//! ```
//!
//! is a running estimate of the potential `−(1/β) log r`, bounded above by
//! `(1/β) log(1/ε)`. Walkers follow underdamped Langevin dynamics in the force
//! field of `v_hat + v_bias`, where `v_bias` is the usual metadynamics sum of
//! repulsive kernels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::DensityGrid;
use crate::grid::{GridSpec, Layout};
use crate::langevin::{em_step, LangevinParams, WalkerState};
use crate::manifold::Space;
use crate::rng::{self, Purpose};

/// Factors below this are dropped from deposits; their contribution is below
/// double precision relative to the unit peak.
const KERNEL_FLOOR: f64 = 1e-16;

/// Deposit kernel, peak value exactly 1 at the centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(−½ Σ ((z−c)/σ)²)`
    Gaussian { sigma: Vec<f64> },
    /// `exp(Σ κ (cos(z−c) − 1))`
    VonMises { kappa: Vec<f64> },
}

impl Kernel {
    pub fn dim(&self) -> usize {
        match self {
            Kernel::Gaussian { sigma } => sigma.len(),
            Kernel::VonMises { kappa } => kappa.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let (name, v) = match self {
            Kernel::Gaussian { sigma } => ("sigma", sigma),
            Kernel::VonMises { kappa } => ("kappa", kappa),
        };
        if v.is_empty() || v.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!("kernel {name} must be positive")));
        }
        Ok(())
    }

    /// One-dimensional factor along dimension `i` for offset `delta`.
    pub fn factor(&self, i: usize, delta: f64) -> f64 {
        match self {
            Kernel::Gaussian { sigma } => {
                let u = delta / sigma[i];
                (-0.5 * u * u).exp()
            }
            Kernel::VonMises { kappa } => (kappa[i] * (delta.cos() - 1.0)).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetadParams {
    /// Bias height `w`.
    pub height: f64,
    /// Deposit every `stride` Langevin steps.
    pub stride: usize,
    pub kernel: Kernel,
    pub epsilon: f64,
    pub langevin: LangevinParams,
}

impl MetadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.height > 0.0) {
            return Err(Error::InvalidParameter("bias height must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        self.kernel.validate()?;
        self.langevin.validate()
    }

    /// Bias added at the kernel centre per deposit, `n·Δt·w`.
    pub fn bias_increment(&self) -> f64 {
        self.stride as f64 * self.langevin.dt * self.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialGrids {
    pub spec: GridSpec,
    pub n_hat: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub v_bias: Vec<f64>,
    pub kernel: Kernel,
    pub epsilon: f64,
    pub beta: f64,
}

impl PotentialGrids {
    /// Fresh grids over `cv_space` with node spacing `spacing`. `v_hat` starts
    /// at the value the regularised formula gives for empty estimates,
    /// `−(1/β) log ε`.
    pub fn new(cv_space: Space, spacing: &[f64], kernel: Kernel, epsilon: f64, beta: f64) -> Result<Self> {
        if kernel.dim() != cv_space.dim() {
            return Err(Error::DimensionMismatch {
                expected: cv_space.dim(),
                got: kernel.dim(),
            });
        }
        kernel.validate()?;
        if matches!(kernel, Kernel::VonMises { .. }) != cv_space.is_torus() {
            return Err(Error::InvalidParameter(
                "von Mises kernels belong on a torus, Gaussian kernels on a box".into(),
            ));
        }
        if !(epsilon > 0.0 && beta > 0.0) {
            return Err(Error::InvalidParameter("epsilon and beta must be positive".into()));
        }
        let spec = GridSpec::new(cv_space, Layout::Nodes, spacing)?;
        let n = spec.len();
        let mut g = PotentialGrids {
            spec,
            n_hat: vec![0.0; n],
            r_hat: vec![0.0; n],
            v_hat: vec![0.0; n],
            v_bias: vec![0.0; n],
            kernel,
            epsilon,
            beta,
        };
        g.recompute_v_hat();
        Ok(g)
    }

    /// Upper bound `(1/β) log(1/ε)` of `v_hat`.
    pub fn v_hat_ceiling(&self) -> f64 {
        (1.0 / self.epsilon).ln() / self.beta
    }

    /// Per-dimension kernel factors along each axis, with the index range
    /// outside of which every factor is below [`KERNEL_FLOOR`].
    fn axis_factors(&self, center: &[f64]) -> Vec<(usize, Vec<f64>)> {
        (0..self.spec.dim())
            .map(|i| {
                let axis = self.spec.axis(i);
                let f: Vec<f64> = axis
                    .iter()
                    .map(|&z| {
                        let d = if self.spec.space.is_torus() {
                            crate::manifold::wrap_angle(z - center[i])
                        } else {
                            z - center[i]
                        };
                        self.kernel.factor(i, d)
                    })
                    .collect();
                let first = f.iter().position(|&v| v >= KERNEL_FLOOR).unwrap_or(f.len());
                let last = f.iter().rposition(|&v| v >= KERNEL_FLOOR).map_or(first, |l| l + 1);
                (first, f[first..last].to_vec())
            })
            .collect()
    }

    /// Kernel centred at `center`, evaluated at every node (no truncation).
    pub fn kernel_eval(&self, center: &[f64]) -> Result<Vec<f64>> {
        self.check_point(center)?;
        let factors: Vec<Vec<f64>> = (0..self.spec.dim())
            .map(|i| {
                self.spec
                    .axis(i)
                    .iter()
                    .map(|&z| {
                        let d = if self.spec.space.is_torus() {
                            crate::manifold::wrap_angle(z - center[i])
                        } else {
                            z - center[i]
                        };
                        self.kernel.factor(i, d)
                    })
                    .collect()
            })
            .collect();
        Ok((0..self.spec.len())
            .map(|k| {
                self.spec
                    .unflat(k)
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| factors[i][j])
                    .product()
            })
            .collect())
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim(),
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CV point"));
        }
        Ok(())
    }

    /// Adds one kernel to `n_hat`, `reward` kernels to `r_hat`, and
    /// `bias_increment` kernels to `v_bias`, without refreshing `v_hat`.
    fn accumulate(&mut self, z: &[f64], reward: f64, bias_increment: f64) -> Result<()> {
        self.check_point(z)?;
        if !(reward >= 0.0) || !reward.is_finite() {
            return Err(Error::InvalidParameter(format!("reward must be finite and non-negative, got {reward}")));
        }
        let factors = self.axis_factors(z);
        let d = self.spec.dim();
        // Walk the truncated hyper-rectangle in row-major order.
        let extents: Vec<usize> = factors.iter().map(|(_, f)| f.len()).collect();
        if extents.contains(&0) {
            return Ok(());
        }
        let count: usize = extents.iter().product();
        let mut local = vec![0usize; d];
        let mut idx = vec![0usize; d];
        for _ in 0..count {
            let mut k = 1.0;
            for i in 0..d {
                k *= factors[i].1[local[i]];
                idx[i] = factors[i].0 + local[i];
            }
            let flat = self.spec.flat(&idx);
            self.n_hat[flat] += k;
            self.r_hat[flat] += reward * k;
            self.v_bias[flat] += bias_increment * k;
            for i in (0..d).rev() {
                local[i] += 1;
                if local[i] < extents[i] {
                    break;
                }
                local[i] = 0;
            }
        }
        Ok(())
    }

    pub fn recompute_v_hat(&mut self) {
        let eps = self.epsilon;
        let inv_beta = 1.0 / self.beta;
        for ((v, &r), &n) in self.v_hat.iter_mut().zip(&self.r_hat).zip(&self.n_hat) {
            *v = -inv_beta * (r / (n + eps) + eps).ln();
        }
    }

    /// One deposit at CV point `z` with reward `reward`, then a full refresh
    /// of `v_hat`.
    pub fn deposit(&mut self, z: &[f64], reward: f64, params: &MetadParams) -> Result<()> {
        self.accumulate(z, reward, params.bias_increment())?;
        self.recompute_v_hat();
        Ok(())
    }

    /// Deposits applied in slice order, with a single `v_hat` refresh at the
    /// end. Equivalent to calling [`PotentialGrids::deposit`] per point.
    pub fn deposit_many(&mut self, points: &[(Vec<f64>, f64)], params: &MetadParams) -> Result<()> {
        for (z, r) in points {
            self.accumulate(z, *r, params.bias_increment())?;
        }
        self.recompute_v_hat();
        Ok(())
    }

    /// `∇_z (v_hat + v_bias)` at `z`.
    pub fn total_gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let a = self.spec.gradient(&self.v_hat, z)?;
        let b = self.spec.gradient(&self.v_bias, z)?;
        Ok(a.iter().zip(&b).map(|(a, b)| a + b).collect())
    }

    /// `exp(−β v_hat)` normalised with the grid's quadrature weights.
    pub fn implied_density(&self) -> DensityGrid {
        let w = self.spec.volume_weights();
        // shift by the minimum for numerical range; cancels in normalisation
        let vmin = self.v_hat.iter().copied().fold(f64::INFINITY, f64::min);
        let vals: Vec<f64> = self
            .v_hat
            .iter()
            .zip(&w)
            .map(|(&v, &w)| (-self.beta * (v - vmin)).exp() * w)
            .collect();
        DensityGrid::from_unnormalized(self.spec.clone(), vals).expect("exp of finite potential is positive")
    }

    /// Target density `r/Z` on the same nodes and quadrature as
    /// [`PotentialGrids::implied_density`].
    pub fn reference_density(&self, reward: impl Fn(&[f64]) -> f64) -> Result<DensityGrid> {
        let w = self.spec.volume_weights();
        let vals = (0..self.spec.len())
            .map(|k| reward(&self.spec.point(k)) * w[k])
            .collect();
        DensityGrid::from_unnormalized(self.spec.clone(), vals)
    }
}

/// What adapted metadynamics needs from an environment: a reward, a CV map
/// with its Jacobian, and the domain the walkers move in.
pub trait Landscape {
    fn walker_space(&self) -> &Space;
    fn reward(&self, x: &[f64]) -> f64;
    fn cv(&self, x: &[f64]) -> Vec<f64>;
    /// `∂z_a/∂x_i` as rows indexed by CV component.
    fn cv_jacobian(&self, x: &[f64]) -> Vec<Vec<f64>>;
}

/// Batch of walkers sharing one set of potential grids.
#[derive(Clone, Debug)]
pub struct AdaptedMetadynamics {
    pub grids: PotentialGrids,
    pub params: MetadParams,
    pub walkers: Vec<WalkerState>,
    rngs: Vec<rng::Rng>,
    steps: u64,
}

impl AdaptedMetadynamics {
    /// Walkers use independent noise streams `Purpose::Walker, i` of `seed`.
    pub fn new(grids: PotentialGrids, params: MetadParams, walkers: Vec<WalkerState>, seed: u64) -> Result<Self> {
        params.validate()?;
        if grids.kernel != params.kernel {
            return Err(Error::InvalidParameter("grid kernel and parameter kernel differ".into()));
        }
        if (grids.beta - params.langevin.beta).abs() > 0.0 {
            return Err(Error::InvalidParameter("potential beta must equal the Langevin beta".into()));
        }
        let rngs = (0..walkers.len())
            .map(|i| rng::stream(seed, Purpose::Walker, i as u64))
            .collect();
        Ok(AdaptedMetadynamics {
            grids,
            params,
            walkers,
            rngs,
            steps: 0,
        })
    }

    /// Number of Langevin steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One timestep for every walker: deposit (every `stride` steps, all
    /// walkers in index order, then a single `v_hat` refresh), force
    /// evaluation against the updated grids, and an Euler–Maruyama move.
    pub fn step<L: Landscape + ?Sized>(&mut self, env: &L) -> Result<()> {
        let zs: Vec<Vec<f64>> = self.walkers.iter().map(|w| env.cv(&w.x)).collect();
        if self.steps.is_multiple_of(self.params.stride as u64) {
            let deposits: Vec<(Vec<f64>, f64)> = self
                .walkers
                .iter()
                .zip(&zs)
                .map(|(w, z)| (z.clone(), env.reward(&w.x)))
                .collect();
            self.grids.deposit_many(&deposits, &self.params)?;
        }
        let space = env.walker_space();
        for ((w, z), rng) in self.walkers.iter_mut().zip(&zs).zip(self.rngs.iter_mut()) {
            let grad_z = self.grids.total_gradient(z)?;
            let jac = env.cv_jacobian(&w.x);
            let mut force = vec![0.0; w.x.len()];
            for (a, row) in jac.iter().enumerate() {
                for (i, dz) in row.iter().enumerate() {
                    force[i] -= grad_z[a] * dz;
                }
            }
            *w = em_step(w, &force, &self.params.langevin, space, rng)?;
        }
        self.steps += 1;
        Ok(())
    }

    pub fn run<L: Landscape + ?Sized>(&mut self, env: &L, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(env)?;
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.walkers.iter().map(|w| w.x.clone()).collect()
    }
}

/// Independent Gaussian initial walkers: positions `N(mean, pos_var)` and
/// momenta `N(0, mom_var)` per coordinate, mapped into `space` (wrapped on a
/// torus, clamped into a box).
pub fn gaussian_walkers<R: Rng + ?Sized>(
    count: usize,
    space: &Space,
    mean: &[f64],
    pos_var: f64,
    mom_var: f64,
    rng: &mut R,
) -> Result<Vec<WalkerState>> {
    let pos = Normal::new(0.0, pos_var.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mom = Normal::new(0.0, mom_var.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    (0..count)
        .map(|_| {
            let mut x: Vec<f64> = mean.iter().map(|m| m + pos.sample(rng)).collect();
            let p: Vec<f64> = (0..mean.len()).map(|_| mom.sample(rng)).collect();
            match space {
                Space::Torus { .. } => space.wrap_in_place(&mut x)?,
                Space::BoundedBox { lower, upper } => {
                    for (i, v) in x.iter_mut().enumerate() {
                        *v = v.clamp(lower[i], upper[i]);
                    }
                }
            }
            Ok(WalkerState::new(x, p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::l1_error;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn line_params(kernel: Kernel, epsilon: f64) -> MetadParams {
        MetadParams {
            height: 0.15,
            stride: 2,
            kernel,
            epsilon,
            langevin: LangevinParams::new(2.0, 1.0, 0.05).unwrap(),
        }
    }

    fn line_grids(sigma: f64, eps: f64) -> PotentialGrids {
        PotentialGrids::new(
            Space::interval(-5.0, 23.0).unwrap(),
            &[0.01],
            Kernel::Gaussian { sigma: vec![sigma] },
            eps,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn kernel_values() {
        let g = line_grids(0.1, 1e-3);
        let k = g.kernel_eval(&[0.0]).unwrap();
        let at = |x: f64| k[((x + 5.0) / 0.01).round() as usize];
        assert_eq!(at(0.0), 1.0);
        assert_abs_diff_eq!(at(0.1), (-0.5f64).exp(), epsilon = 1e-12);

        let t = PotentialGrids::new(
            Space::torus(1).unwrap(),
            &[PI / 50.0],
            Kernel::VonMises { kappa: vec![10.0] },
            1e-6,
            0.4009,
        )
        .unwrap();
        let k = t.kernel_eval(&[0.0]).unwrap();
        assert_eq!(k[50], 1.0);
        // node −π is π away from the centre: exp(−20)
        assert_abs_diff_eq!(k[0], (-20.0f64).exp(), epsilon = 1e-20);
        assert_abs_diff_eq!(k[0], 2.061153622438558e-9, epsilon = 1e-20);
    }

    #[test]
    fn single_deposit_closed_form() {
        let params = line_params(Kernel::Gaussian { sigma: vec![0.1] }, 1e-3);
        let mut g = line_grids(0.1, 1e-3);
        let node = 700; // z = 2.0
        let z0 = g.spec.coord(0, node);
        g.deposit(&[z0], 0.37, &params).unwrap();
        assert_eq!(g.n_hat[node], 1.0);
        assert_eq!(g.r_hat[node], 0.37);
        let expect = -(0.37 / (1.0 + 1e-3) + 1e-3f64).ln();
        assert_abs_diff_eq!(g.v_hat[node], expect, epsilon = 1e-14);
        assert_abs_diff_eq!(g.v_bias[node], 2.0 * 0.05 * 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(g.v_bias[node], 0.015, epsilon = 1e-15);
    }

    #[test]
    fn deposit_matches_untruncated_kernel() {
        let params = line_params(Kernel::Gaussian { sigma: vec![0.1] }, 1e-3);
        let mut g = line_grids(0.1, 1e-3);
        g.deposit(&[3.217], 1.0, &params).unwrap();
        let k = g.kernel_eval(&[3.217]).unwrap();
        for (a, b) in g.n_hat.iter().zip(&k) {
            assert!((a - b).abs() <= KERNEL_FLOOR);
        }
    }

    #[test]
    fn zero_reward_keeps_ceiling() {
        let params = line_params(Kernel::Gaussian { sigma: vec![0.1] }, 1e-3);
        let mut g = line_grids(0.1, 1e-3);
        for i in 0..50 {
            g.deposit(&[-5.0 + i as f64 * 0.5], 0.0, &params).unwrap();
        }
        let ceiling = g.v_hat_ceiling();
        assert_abs_diff_eq!(ceiling, -(1e-3f64).ln(), epsilon = 1e-12);
        for v in &g.v_hat {
            assert_abs_diff_eq!(*v, ceiling, epsilon = 1e-12);
        }
    }

    #[test]
    fn negative_reward_rejected() {
        let params = line_params(Kernel::Gaussian { sigma: vec![0.1] }, 1e-3);
        let mut g = line_grids(0.1, 1e-3);
        assert!(g.deposit(&[0.0], -1.0, &params).is_err());
    }

    #[test]
    fn mismatched_kernel_rejected() {
        assert!(PotentialGrids::new(
            Space::torus(1).unwrap(),
            &[0.1],
            Kernel::Gaussian { sigma: vec![0.1] },
            1e-3,
            1.0
        )
        .is_err());
        assert!(PotentialGrids::new(
            Space::interval(0.0, 1.0).unwrap(),
            &[0.1],
            Kernel::Gaussian { sigma: vec![0.1, 0.2] },
            1e-3,
            1.0
        )
        .is_err());
    }

    #[test]
    fn implied_density_of_constant_potential_is_uniform() {
        let g = line_grids(0.1, 1e-3);
        let d = g.implied_density();
        let s: f64 = d.mass.iter().sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
        let w = g.spec.volume_weights();
        let total: f64 = w.iter().sum();
        for (m, w) in d.mass.iter().zip(&w) {
            assert_abs_diff_eq!(*m, w / total, epsilon = 1e-15);
        }
    }

    #[test]
    fn implied_density_of_exact_potential_is_reward() {
        let mut g = line_grids(0.1, 1e-3);
        let r = |x: &[f64]| 1.0 + (x[0] / 3.0).sin().powi(2);
        for k in 0..g.spec.len() {
            g.v_hat[k] = -r(&g.spec.point(k)).ln();
        }
        let implied = g.implied_density();
        let target = g.reference_density(r).unwrap();
        assert!(l1_error(&implied, &target).unwrap() < 1e-12);
    }

    struct Flat;
    impl Landscape for Flat {
        fn walker_space(&self) -> &Space {
            static S: std::sync::OnceLock<Space> = std::sync::OnceLock::new();
            S.get_or_init(|| Space::interval(-5.0, 23.0).unwrap())
        }
        fn reward(&self, _x: &[f64]) -> f64 {
            0.0
        }
        fn cv(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
        fn cv_jacobian(&self, _x: &[f64]) -> Vec<Vec<f64>> {
            vec![vec![1.0]]
        }
    }

    #[test]
    fn fresh_grids_give_free_motion() {
        let g = line_grids(0.1, 1e-3);
        assert_eq!(g.total_gradient(&[4.2]).unwrap(), vec![0.0]);
        let mut params = line_params(Kernel::Gaussian { sigma: vec![0.1] }, 1e-3);
        params.stride = 1_000_000; // first step deposits, later steps do not
        let w = vec![WalkerState::new(vec![1.0], vec![0.5])];
        let mut am = AdaptedMetadynamics::new(g.clone(), params.clone(), w.clone(), 3).unwrap();
        // a zero-reward deposit leaves v_hat flat, so only v_bias pushes
        am.grids = g;
        am.steps = 1;
        am.step(&Flat).unwrap();
        let mut rng = rng::stream(3, Purpose::Walker, 0);
        let free = em_step(&w[0], &[0.0], &params.langevin, Flat.walker_space(), &mut rng).unwrap();
        assert_eq!(am.walkers[0], free);
    }

    #[test]
    fn walker_order_only_changes_rounding() {
        let params = line_params(Kernel::Gaussian { sigma: vec![0.1] }, 1e-3);
        let pts: Vec<(Vec<f64>, f64)> = (0..64)
            .map(|i| (vec![-4.0 + 0.37 * i as f64], 0.1 + 0.01 * i as f64))
            .collect();
        let mut a = line_grids(0.1, 1e-3);
        a.deposit_many(&pts, &params).unwrap();
        let mut rev = pts.clone();
        rev.reverse();
        let mut b = line_grids(0.1, 1e-3);
        b.deposit_many(&rev, &params).unwrap();
        for k in 0..a.spec.len() {
            assert!((a.n_hat[k] - b.n_hat[k]).abs() < 1e-10);
            assert!((a.r_hat[k] - b.r_hat[k]).abs() < 1e-10);
            assert!((a.v_bias[k] - b.v_bias[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn v_hat_bounded_and_bias_monotone() {
        let params = line_params(Kernel::Gaussian { sigma: vec![0.1] }, 1e-3);
        let mut g = line_grids(0.1, 1e-3);
        let mut rng = rng::stream(5, Purpose::Standalone, 0);
        let mut prev = g.v_bias.clone();
        for _ in 0..200 {
            let z = rng.random_range(-5.0..23.0);
            let r = rng.random_range(0.0..5.0);
            g.deposit(&[z], r, &params).unwrap();
            for (a, b) in g.v_bias.iter().zip(&prev) {
                assert!(a >= b);
            }
            prev = g.v_bias.clone();
            let ceiling = g.v_hat_ceiling();
            assert!(g.v_hat.iter().all(|&v| v <= ceiling + 1e-12));
        }
    }
}
