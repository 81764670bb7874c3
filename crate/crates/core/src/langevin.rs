//! Euler–Maruyama integration of underdamped Langevin dynamics.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Space;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    pub gamma: f64,
    pub beta: f64,
    pub dt: f64,
    /// Diagonal mass matrix; empty means unit mass in every dimension.
    #[serde(default)]
    pub mass: Vec<f64>,
}

impl LangevinParams {
    pub fn new(gamma: f64, beta: f64, dt: f64) -> Result<Self> {
        let p = LangevinParams {
            gamma,
            beta,
            dt,
            mass: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("beta", self.beta), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.mass.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidParameter("mass entries must be positive".into()));
        }
        Ok(())
    }

    fn mass(&self, i: usize) -> f64 {
        self.mass.get(i).copied().unwrap_or(1.0)
    }

    /// Standard deviation of the momentum kick per step, `√(2γΔt/β)`.
    pub fn noise_scale(&self) -> f64 {
        (2.0 * self.gamma * self.dt / self.beta).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkerState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl WalkerState {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Self {
        WalkerState { x, p, t: 0.0 }
    }
}

/// One Euler–Maruyama step with fresh standard-normal noise from `rng`.
pub fn em_step<R: Rng + ?Sized>(
    w: &WalkerState,
    force: &[f64],
    params: &LangevinParams,
    space: &Space,
    rng: &mut R,
) -> Result<WalkerState> {
    let noise: Vec<f64> = (0..w.x.len()).map(|_| rng.sample(StandardNormal)).collect();
    em_step_with_noise(w, force, params, space, &noise)
}

/// One Euler–Maruyama step with caller-supplied standard-normal draws `noise`.
///
/// Position uses the momentum from the start of the step; the walker is then
/// wrapped (torus) or reflected (box).
pub fn em_step_with_noise(
    w: &WalkerState,
    force: &[f64],
    params: &LangevinParams,
    space: &Space,
    noise: &[f64],
) -> Result<WalkerState> {
    let d = space.dim();
    for (n, len) in [(w.x.len(), d), (w.p.len(), d), (force.len(), d), (noise.len(), d)] {
        if n != len {
            return Err(Error::DimensionMismatch { expected: len, got: n });
        }
    }
    if force.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("Langevin force"));
    }
    let dt = params.dt;
    let kick = params.noise_scale();
    let mut x = Vec::with_capacity(d);
    let mut p = Vec::with_capacity(d);
    for i in 0..d {
        let m = params.mass(i);
        x.push(w.x[i] + w.p[i] / m * dt);
        p.push(w.p[i] + force[i] * dt - params.gamma * w.p[i] * dt + kick * m.sqrt() * noise[i]);
    }
    match space {
        Space::Torus { .. } => space.wrap_in_place(&mut x)?,
        Space::BoundedBox { .. } => space.reflect(&mut x, &mut p)?,
    }
    Ok(WalkerState { x, p, t: w.t + dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;

    fn wide() -> Space {
        Space::interval(-1e6, 1e6).unwrap()
    }

    #[test]
    fn noiseless_frictionless_drift() {
        let mut params = LangevinParams::new(1.0, 1.0, 0.1).unwrap();
        params.gamma = 0.0;
        let w = WalkerState::new(vec![1.0], vec![2.0]);
        let n = em_step_with_noise(&w, &[0.0], &params, &wide(), &[0.0]).unwrap();
        assert_abs_diff_eq!(n.x[0], 1.2, epsilon = 1e-15);
        assert_eq!(n.p[0], 2.0);
        assert_abs_diff_eq!(n.t, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn force_only_step() {
        let params = LangevinParams::new(2.0, 1.0, 0.05).unwrap();
        let w = WalkerState::new(vec![0.0], vec![0.0]);
        let n = em_step_with_noise(&w, &[1.0], &params, &wide(), &[0.0]).unwrap();
        assert_eq!(n.x[0], 0.0);
        assert_abs_diff_eq!(n.p[0], 0.05, epsilon = 1e-15);
    }

    #[test]
    fn noise_amplitude() {
        let params = LangevinParams::new(2.0, 1.0, 0.05).unwrap();
        let w = WalkerState::new(vec![0.0], vec![0.0]);
        let n = em_step_with_noise(&w, &[0.0], &params, &wide(), &[1.3]).unwrap();
        assert_abs_diff_eq!(n.p[0], 0.2f64.sqrt() * 1.3, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let params = LangevinParams::new(2.0, 1.0, 0.05).unwrap();
        let w = WalkerState::new(vec![0.0], vec![0.0]);
        assert!(matches!(
            em_step_with_noise(&w, &[f64::NAN], &params, &wide(), &[0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(em_step_with_noise(&w, &[0.0, 1.0], &params, &wide(), &[0.0]).is_err());
        assert!(LangevinParams::new(0.0, 1.0, 0.1).is_err());
        assert!(LangevinParams::new(1.0, -1.0, 0.1).is_err());
    }

    #[test]
    fn wraps_on_torus_and_reflects_in_box() {
        let params = LangevinParams::new(0.1, 1.0, 1.0).unwrap();
        let t = Space::torus(1).unwrap();
        let w = WalkerState::new(vec![3.0], vec![0.5]);
        let n = em_step_with_noise(&w, &[0.0], &params, &t, &[0.0]).unwrap();
        assert!(t.contains(&n.x));
        let b = Space::interval(0.0, 3.2).unwrap();
        let n = em_step_with_noise(&w, &[0.0], &params, &b, &[0.0]).unwrap();
        assert_abs_diff_eq!(n.x[0], 2.9, epsilon = 1e-12);
        assert!(n.p[0] < 0.0);
    }

    #[test]
    fn seeded_steps_are_bit_identical() {
        let params = LangevinParams::new(2.0, 1.0, 0.01).unwrap();
        let run = || {
            let mut rng = stream(11, Purpose::Standalone, 0);
            let mut w = WalkerState::new(vec![0.3], vec![0.0]);
            for _ in 0..1000 {
                let f = [-w.x[0]];
                w = em_step(&w, &f, &params, &wide(), &mut rng).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }
}
