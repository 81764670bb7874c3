//! Mixture policies over step displacements.
//!
//! A head of the network emits a raw vector which [`HeadSpec`] maps to a
//! [`MixturePolicy`]: Gaussian mixtures on ℝ or ℝ² (diagonal covariance) and
//! mixtures of products of univariate von Mises laws on 𝕋². Raw layout is
//! `means | scales | weight logits`.

use std::f64::consts::{E, PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::wrap_angle;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    Gauss1D,
    Gauss2D,
    VonMises2D,
}

impl PolicyKind {
    pub fn components(self) -> usize {
        match self {
            PolicyKind::Gauss1D => 3,
            PolicyKind::Gauss2D => 4,
            PolicyKind::VonMises2D => 3,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            PolicyKind::Gauss1D => 1,
            _ => 2,
        }
    }

    /// Number of raw scale slots per component. The 2-D Gaussian head carries
    /// three per component of which the diagonal model reads the first two.
    fn scale_slots(self) -> usize {
        match self {
            PolicyKind::Gauss1D => 1,
            PolicyKind::Gauss2D => 3,
            PolicyKind::VonMises2D => 2,
        }
    }

    pub fn raw_len(self) -> usize {
        let k = self.components();
        k * self.dim() + k * self.scale_slots() + k
    }

    pub fn is_periodic(self) -> bool {
        self == PolicyKind::VonMises2D
    }
}

/// Reparameterisation of one head.
///
/// Gaussian kinds: `μ = lo + (hi − lo)·sigmoid(raw)`, `σ` likewise over
/// `scale_range`. Von Mises: `μ = 2·atan(raw)`, and `scale_range` bounds
/// `ln κ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: PolicyKind,
    pub mean_range: (f64, f64),
    pub scale_range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub mean: Vec<f64>,
    /// Standard deviations, or concentrations for von Mises.
    pub scale: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixturePolicy {
    pub kind: PolicyKind,
    pub components: Vec<Component>,
    pub weights: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl HeadSpec {
    pub fn new(kind: PolicyKind, mean_range: (f64, f64), scale_range: (f64, f64)) -> Result<Self> {
        for (name, (lo, hi)) in [("mean", mean_range), ("scale", scale_range)] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} range ({lo}, {hi}) is empty")));
            }
        }
        if kind != PolicyKind::VonMises2D && scale_range.0 <= 0.0 {
            return Err(Error::InvalidParameter("Gaussian scales must be positive".into()));
        }
        Ok(HeadSpec {
            kind,
            mean_range,
            scale_range,
        })
    }

    pub fn raw_len(&self) -> usize {
        self.kind.raw_len()
    }

    fn check(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.raw_len() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} head needs {} raw outputs, got {}",
                self.kind,
                self.raw_len(),
                raw.len()
            )));
        }
        Ok(())
    }

    /// Offsets of (means, scales, weights) in the raw vector.
    fn offsets(&self) -> (usize, usize, usize) {
        let k = self.kind.components();
        let s = k * self.kind.dim();
        let w = s + k * self.kind.scale_slots();
        (0, s, w)
    }

    /// Returns the mapped value and its derivative with respect to `raw`.
    fn mean_of(&self, raw: f64) -> (f64, f64) {
        if self.kind.is_periodic() {
            (2.0 * raw.atan(), 2.0 / (1.0 + raw * raw))
        } else {
            let (lo, hi) = self.mean_range;
            let s = sigmoid(raw);
            (lo + (hi - lo) * s, (hi - lo) * s * (1.0 - s))
        }
    }

    fn scale_of(&self, raw: f64) -> (f64, f64) {
        let (lo, hi) = self.scale_range;
        let s = sigmoid(raw);
        let v = lo + (hi - lo) * s;
        let dv = (hi - lo) * s * (1.0 - s);
        if self.kind.is_periodic() {
            let kappa = v.exp();
            (kappa, kappa * dv)
        } else {
            (v, dv)
        }
    }

    pub fn to_mixture(&self, raw: &[f64]) -> Result<MixturePolicy> {
        self.check(raw)?;
        let kind = self.kind;
        let (d, slots) = (kind.dim(), kind.scale_slots());
        let (_, so, wo) = self.offsets();
        let components = (0..kind.components())
            .map(|c| Component {
                mean: (0..d).map(|i| self.mean_of(raw[c * d + i]).0).collect(),
                scale: (0..d).map(|i| self.scale_of(raw[so + c * slots + i]).0).collect(),
            })
            .collect();
        Ok(MixturePolicy {
            kind,
            components,
            weights: softmax(&raw[wo..]),
        })
    }

    /// `log p(x)` of the mixture encoded by `raw` together with `∂/∂raw`.
    pub fn log_density_grad(&self, raw: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(raw)?;
        let kind = self.kind;
        let (d, slots, k) = (kind.dim(), kind.scale_slots(), kind.components());
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let (_, so, wo) = self.offsets();
        let log_w = {
            let lse = log_sum_exp(&raw[wo..]);
            raw[wo..].iter().map(|l| l - lse).collect::<Vec<_>>()
        };
        let mut terms = Vec::with_capacity(k);
        // per component, d log c / d raw for each mean and scale slot
        let mut d_mean = vec![0.0; k * d];
        let mut d_scale = vec![0.0; k * d];
        for c in 0..k {
            let mut lc = 0.0;
            for i in 0..d {
                let (mu, dmu) = self.mean_of(raw[c * d + i]);
                let (sc, dsc) = self.scale_of(raw[so + c * slots + i]);
                let (l, gm, gs) = if kind.is_periodic() {
                    let delta = x[i] - mu;
                    let a = bessel_ratio(sc);
                    (
                        sc * (delta.cos() - 1.0) - (TAU * bessel_i0e(sc)).ln(),
                        sc * delta.sin(),
                        delta.cos() - a,
                    )
                } else {
                    let z = (x[i] - mu) / sc;
                    (-0.5 * z * z - sc.ln() - LN_SQRT_2PI, z / sc, (z * z - 1.0) / sc)
                };
                lc += l;
                d_mean[c * d + i] = gm * dmu;
                d_scale[c * d + i] = gs * dsc;
            }
            terms.push(log_w[c] + lc);
        }
        let lp = log_sum_exp(&terms);
        let mut grad = vec![0.0; raw.len()];
        for c in 0..k {
            let resp = (terms[c] - lp).exp();
            for i in 0..d {
                grad[c * d + i] = resp * d_mean[c * d + i];
                grad[so + c * slots + i] = resp * d_scale[c * d + i];
            }
            grad[wo + c] = resp - log_w[c].exp();
        }
        Ok((lp, grad))
    }
}

impl MixturePolicy {
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    fn component_log_density(&self, c: &Component, x: &[f64]) -> f64 {
        if self.kind.is_periodic() {
            c.mean
                .iter()
                .zip(&c.scale)
                .zip(x)
                .map(|((&mu, &kappa), &xi)| kappa * ((xi - mu).cos() - 1.0) - (TAU * bessel_i0e(kappa)).ln())
                .sum()
        } else {
            c.mean
                .iter()
                .zip(&c.scale)
                .zip(x)
                .map(|((&mu, &s), &xi)| {
                    let z = (xi - mu) / s;
                    -0.5 * z * z - s.ln() - LN_SQRT_2PI
                })
                .sum()
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| w.ln() + self.component_log_density(c, x))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Ancestral sample. Von Mises draws are canonical angles.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.weights.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        while self.weights[pick] == 0.0 && pick > 0 {
            pick -= 1;
        }
        let c = &self.components[pick];
        if self.kind.is_periodic() {
            c.mean
                .iter()
                .zip(&c.scale)
                .map(|(&mu, &kappa)| sample_von_mises(mu, kappa, rng))
                .collect()
        } else {
            c.mean
                .iter()
                .zip(&c.scale)
                .map(|(&mu, &s)| mu + s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    }

    /// Widens every component by `sigma_bar`: `σ → σ + σ̄` for Gaussians and
    /// `κ → (κ^{−1/2} + σ̄)^{−2}` for von Mises.
    pub fn with_noise(&self, sigma_bar: f64) -> MixturePolicy {
        if sigma_bar == 0.0 {
            return self.clone();
        }
        let periodic = self.kind.is_periodic();
        let components = self
            .components
            .iter()
            .map(|c| Component {
                mean: c.mean.clone(),
                scale: c
                    .scale
                    .iter()
                    .map(|&s| if periodic { (s.powf(-0.5) + sigma_bar).powi(-2) } else { s + sigma_bar })
                    .collect(),
            })
            .collect();
        MixturePolicy {
            kind: self.kind,
            components,
            weights: self.weights.clone(),
        }
    }
}

/// Exploration noise level at batch `j` of `total`:
/// `σ̄₀ (exp(−4ej/B) − exp(−2e))` on the first half, zero afterwards.
pub fn noise_schedule(j: usize, total: usize, sigma0: f64) -> f64 {
    let half = total as f64 / 2.0;
    if (j as f64) >= half {
        return 0.0;
    }
    let v = sigma0 * ((-2.0 * j as f64 * E / half).exp() - (-2.0 * E).exp());
    v.max(0.0)
}

/// Best–Fisher rejection sampler, result wrapped into `[−π, π)`.
pub fn sample_von_mises<R: Rng + ?Sized>(mu: f64, kappa: f64, rng: &mut R) -> f64 {
    if kappa < 1e-8 {
        return wrap_angle(rng.random_range(-PI..PI));
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let theta = if u3 > 0.5 { f.acos() } else { -f.acos() };
            return wrap_angle(mu + theta);
        }
    }
}

/// `e^{−x} I_ν(x)` for `x ≥ 0` and `ν ∈ {0, 1}`.
fn scaled_bessel(nu: u32, x: f64) -> f64 {
    if x <= 30.0 {
        // power series Σ (x/2)^{2k+ν} / (k! (k+ν)!)
        let half = 0.5 * x;
        let mut term = if nu == 0 { 1.0 } else { half };
        let mut sum = term;
        let q = half * half;
        let mut k = 1.0;
        loop {
            term *= q / (k * (k + nu as f64));
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            k += 1.0;
        }
        sum * (-x).exp()
    } else {
        // Hankel asymptotic expansion
        let mu = 4.0 * (nu * nu) as f64;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            let kf = k as f64;
            let odd = 2.0 * kf - 1.0;
            let next = -term * (mu - odd * odd) / (kf * 8.0 * x);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        sum / (TAU * x).sqrt()
    }
}

pub fn bessel_i0e(x: f64) -> f64 {
    scaled_bessel(0, x.abs())
}

pub fn bessel_i1e(x: f64) -> f64 {
    x.signum() * scaled_bessel(1, x.abs())
}

/// `I₁(κ)/I₀(κ)`, the derivative of `ln I₀`.
pub fn bessel_ratio(kappa: f64) -> f64 {
    bessel_i1e(kappa) / bessel_i0e(kappa)
}
