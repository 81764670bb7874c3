//! Dense networks with reverse-mode gradients, Adam, and learning-rate
//! schedules.
//!
//! The network is a torso of `Linear → GELU → Dropout` blocks feeding any
//! number of single-layer linear heads. Forward passes work on row batches and
//! return a [`Tape`] holding what the backward pass needs.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Normal CDF `Φ` and density `φ` tabulated on `[−PHI_EDGE, PHI_EDGE]` at
/// spacing `1/PHI_STEPS` and evaluated by cubic Hermite interpolation with
/// the analytic derivatives `Φ' = φ`, `φ' = −xφ`. Absolute error is below
/// 1e-13; outside the table `Φ` is 0 or 1 to double precision.
const PHI_EDGE: f64 = 8.5;
const PHI_STEPS: f64 = 512.0;

static PHI: std::sync::LazyLock<Vec<[f64; 2]>> = std::sync::LazyLock::new(|| {
    let n = (2.0 * PHI_EDGE * PHI_STEPS) as usize + 1;
    (0..n)
        .map(|i| {
            let x = -PHI_EDGE + i as f64 / PHI_STEPS;
            [
                0.5 * libm::erfc(-x / std::f64::consts::SQRT_2),
                INV_SQRT_2PI * (-0.5 * x * x).exp(),
            ]
        })
        .collect()
});

/// `(Φ(x), φ(x))` from the table.
#[inline]
fn normal_cdf_pdf_in(tab: &[[f64; 2]], x: f64) -> (f64, f64) {
    if x <= -PHI_EDGE || x.is_nan() {
        return if x.is_nan() { (x, x) } else { (0.0, 0.0) };
    }
    if x >= PHI_EDGE {
        return (1.0, 0.0);
    }
    const H: f64 = 1.0 / PHI_STEPS;
    let t = (x + PHI_EDGE) * PHI_STEPS;
    let i = (t as usize).min(tab.len() - 2);
    let s = t - i as f64;
    let [c0, p0] = tab[i];
    let [c1, p1] = tab[i + 1];
    let x0 = -PHI_EDGE + i as f64 * H;
    let x1 = x0 + H;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = (s3 - 2.0 * s2 + s) * H;
    let h01 = 1.0 - h00;
    let h11 = (s3 - s2) * H;
    let cdf = c0 * h00 + p0 * h10 + c1 * h01 + p1 * h11;
    let pdf = p0 * h00 - x0 * p0 * h10 + p1 * h01 - x1 * p1 * h11;
    (cdf, pdf)
}

#[inline]
fn normal_cdf_pdf(x: f64) -> (f64, f64) {
    normal_cdf_pdf_in(&PHI, x)
}

/// Applies GELU elementwise.
fn gelu_array(z: &Array2<f64>) -> Array2<f64> {
    let tab: &[[f64; 2]] = &PHI;
    z.mapv(|x| x * normal_cdf_pdf_in(tab, x).0)
}

/// Multiplies `d` elementwise by the GELU derivative at `z`.
fn mul_gelu_grad(d: &mut Array2<f64>, z: &Array2<f64>) {
    let tab: &[[f64; 2]] = &PHI;
    ndarray::Zip::from(d).and(z).for_each(|d, &x| {
        let (c, p) = normal_cdf_pdf_in(tab, x);
        *d *= c + x * p;
    });
}

/// Exact-form GELU, `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf_pdf(x).0
}

/// `d/dx x Φ(x) = Φ(x) + x φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    let (c, p) = normal_cdf_pdf(x);
    c + x * p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            w: Array2::zeros((n_in, n_out)),
            b: Array1::zeros(n_out),
        }
    }

    /// Uniform `(−1/√in, 1/√in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((n_in, n_out), || rng.random_range(-bound..bound));
        let b = Array1::from_shape_simple_fn(n_out, || rng.random_range(-bound..bound));
        Dense { w, b }
    }

    pub fn n_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w.ncols()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub name: String,
    pub layer: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub torso: Vec<Dense>,
    pub heads: Vec<Head>,
    pub dropout: f64,
    pub mode: Mode,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input to each torso layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each torso layer.
    pre: Vec<Array2<f64>>,
    /// Scaled dropout masks (`0` or `1/(1−p)`), one per torso layer in train mode.
    masks: Vec<Option<Array2<f64>>>,
    /// Torso output shared by the heads.
    features: Array2<f64>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }
}

/// Gradient of every network parameter, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub torso: Vec<Dense>,
    pub heads: Vec<Dense>,
}

impl MlpGrads {
    pub fn zeros_like(m: &Mlp) -> Self {
        MlpGrads {
            torso: m.torso.iter().map(|l| Dense::zeros(l.n_in(), l.n_out())).collect(),
            heads: m.heads.iter().map(|h| Dense::zeros(h.layer.n_in(), h.layer.n_out())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.torso.iter_mut().zip(&other.torso).chain(self.heads.iter_mut().zip(&other.heads)) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.torso
            .iter()
            .chain(&self.heads)
            .flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")])
            .collect()
    }
}

impl Mlp {
    /// `input → hidden × layers` torso and one head per `(name, width)`.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        layers: usize,
        heads: &[(&str, usize)],
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidParameter(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        if layers == 0 || hidden == 0 || input == 0 {
            return Err(Error::InvalidParameter("network sizes must be positive".into()));
        }
        let mut torso = Vec::with_capacity(layers);
        let mut n_in = input;
        for _ in 0..layers {
            torso.push(Dense::init(n_in, hidden, rng));
            n_in = hidden;
        }
        let heads = heads
            .iter()
            .map(|&(name, width)| Head {
                name: name.to_string(),
                layer: Dense::init(hidden, width, rng),
            })
            .collect();
        Ok(Mlp {
            torso,
            heads,
            dropout,
            mode: Mode::Train,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.torso[0].n_in()
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass recording a tape. Dropout masks are drawn from `rng` in
    /// train mode.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Array2<f64>, rng: &mut R) -> Result<(Vec<Array2<f64>>, Tape)> {
        self.check_input(x)?;
        let train = self.mode == Mode::Train && self.dropout > 0.0;
        let keep_scale = 1.0 / (1.0 - self.dropout);
        let mut inputs = Vec::with_capacity(self.torso.len());
        let mut pre = Vec::with_capacity(self.torso.len());
        let mut masks = Vec::with_capacity(self.torso.len());
        let mut h = x.clone();
        for layer in &self.torso {
            let z = layer.apply(&h);
            let mut a = gelu_array(&z);
            let mask = if train {
                // a unit drops when a uniform 32-bit draw falls below p·2³²
                let cut = (self.dropout * 4_294_967_296.0) as u64;
                let m = Array2::from_shape_simple_fn(a.raw_dim(), || {
                    if (rng.next_u32() as u64) < cut {
                        0.0
                    } else {
                        keep_scale
                    }
                });
                a *= &m;
                Some(m)
            } else {
                None
            };
            inputs.push(std::mem::replace(&mut h, a));
            pre.push(z);
            masks.push(mask);
        }
        let outs = self.heads.iter().map(|hd| hd.layer.apply(&h)).collect();
        Ok((
            outs,
            Tape {
                inputs,
                pre,
                masks,
                features: h,
            },
        ))
    }

    /// Forward pass without a tape and without dropout.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.torso {
            h = gelu_array(&layer.apply(&h));
        }
        Ok(self.heads.iter().map(|hd| hd.layer.apply(&h)).collect())
    }

    /// Reverse pass. `head_grads[k]` is `∂L/∂(output of head k)`, or `None`
    /// when the loss does not touch that head.
    pub fn backward(&self, tape: &Tape, head_grads: &[Option<Array2<f64>>]) -> Result<MlpGrads> {
        if head_grads.len() != self.heads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} head gradients for {} heads",
                head_grads.len(),
                self.heads.len()
            )));
        }
        if tape.inputs.len() != self.torso.len() {
            return Err(Error::ShapeMismatch("tape does not match network depth".into()));
        }
        let rows = tape.rows();
        let hidden = tape.features.ncols();
        let mut grads = MlpGrads::zeros_like(self);
        let mut d_feat = Array2::<f64>::zeros((rows, hidden));
        for (k, (head, g)) in self.heads.iter().zip(head_grads).enumerate() {
            let Some(g) = g else { continue };
            if g.dim() != (rows, head.layer.n_out()) {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for head `{}` has shape {:?}, expected {:?}",
                    head.name,
                    g.dim(),
                    (rows, head.layer.n_out())
                )));
            }
            grads.heads[k].w = tape.features.t().dot(g);
            grads.heads[k].b = g.sum_axis(Axis(0));
            d_feat += &g.dot(&head.layer.w.t());
        }
        let mut d_h = d_feat;
        for l in (0..self.torso.len()).rev() {
            if let Some(m) = &tape.masks[l] {
                d_h *= m;
            }
            mul_gelu_grad(&mut d_h, &tape.pre[l]);
            grads.torso[l].w = tape.inputs[l].t().dot(&d_h);
            grads.torso[l].b = d_h.sum_axis(Axis(0));
            if l > 0 {
                d_h = d_h.dot(&self.torso[l].w.t());
            }
        }
        Ok(grads)
    }

    /// Mutable views of every parameter tensor, in the order of
    /// [`MlpGrads::slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.torso
            .iter_mut()
            .chain(self.heads.iter_mut().map(|h| &mut h.layer))
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.torso
            .iter()
            .chain(self.heads.iter().map(|h| &h.layer))
            .flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

/// `lr0 · (1 − j/B)`, reaching zero at the final batch.
pub fn lr_at(j: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    lr0 * (1.0 - j as f64 / total as f64).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 10.0,
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub steps: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    /// Clips `grads` in place to the configured global norm and returns the
    /// norm before clipping.
    pub fn clip(&self, grads: &mut [Vec<f64>]) -> f64 {
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > self.config.clip_norm {
            let s = self.config.clip_norm / norm;
            for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
                *g *= s;
            }
        }
        norm
    }

    /// Global-norm clipping followed by one bias-corrected Adam update.
    /// `lrs[k]` is the learning rate for tensor `k`. A non-finite gradient
    /// leaves both parameters and moments untouched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lrs: &[f64]) -> Result<f64> {
        if params.len() != self.m.len() || grads.len() != self.m.len() || lrs.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {} params, {} grads, {} rates",
                self.m.len(),
                params.len(),
                grads.len(),
                lrs.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(Error::ShapeMismatch(format!("tensor {k} changed size")));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient"));
        }
        let mut clipped: Vec<Vec<f64>> = grads.iter().map(|g| g.to_vec()).collect();
        let norm = self.clip(&mut clipped);
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let lr = lrs[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let g = clipped[k][i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                if lr != 0.0 {
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    p[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small(seed: u64, dropout: f64) -> Mlp {
        let mut rng = stream(seed, Purpose::Standalone, 0);
        Mlp::new(3, 5, 2, &[("a", 2), ("b", 1)], dropout, &mut rng).unwrap()
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert_abs_diff_eq!(gelu(1.0), 0.8413447460685429, epsilon = 1e-15);
        assert_eq!(gelu(-40.0), 0.0);
        assert_eq!(gelu(40.0), 40.0);
        let h = 1e-6;
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn tabulated_cdf_matches_erf() {
        let mut worst: f64 = 0.0;
        for i in 0..=400_000 {
            let x = -10.0 + i as f64 * 5e-5;
            let (c, p) = normal_cdf_pdf(x);
            let c_ref = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
            let p_ref = INV_SQRT_2PI * (-0.5 * x * x).exp();
            worst = worst.max((c - c_ref).abs()).max((p - p_ref).abs());
        }
        assert!(worst < 1e-13, "{worst:e}");
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = small(1, 0.0);
        for p in m.param_slices_mut() {
            p.fill(0.0);
        }
        let x = array![[1.0, -2.0, 3.0]];
        let out = m.predict(&x).unwrap();
        assert!(out.iter().all(|o| o.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut m = small(2, 0.2);
        m.mode = Mode::Eval;
        let x = array![[0.1, 0.2, 0.3], [1.0, 0.0, -1.0]];
        let mut r1 = stream(1, Purpose::Standalone, 0);
        let mut r2 = stream(2, Purpose::Standalone, 0);
        let (a, _) = m.forward(&x, &mut r1).unwrap();
        let (b, _) = m.forward(&x, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, m.predict(&x).unwrap());
    }

    #[test]
    fn linear_gradient() {
        // single 1×1 linear head on an identity-ish torso: y = w·f
        let m = small(3, 0.0);
        let x = array![[0.5, -0.1, 0.3]];
        let mut rng = stream(0, Purpose::Standalone, 0);
        let (_, tape) = m.forward(&x, &mut rng).unwrap();
        let g = m.backward(&tape, &[None, Some(array![[1.0]])]).unwrap();
        // dL/dW_head = features
        assert_eq!(g.heads[1].w.column(0).to_owned(), tape.features.row(0).to_owned());
        assert_eq!(g.heads[1].b[0], 1.0);
        assert!(g.heads[0].w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let m = small(4, 0.2);
        let x = array![[0.5, -0.1, 0.3]];
        let mut rng = stream(0, Purpose::Standalone, 0);
        let (_, tape) = m.forward(&x, &mut rng).unwrap();
        let g = m.backward(&tape, &[Some(Array2::zeros((1, 2))), Some(Array2::zeros((1, 1)))]).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn shape_errors() {
        let m = small(5, 0.0);
        let mut rng = stream(0, Purpose::Standalone, 0);
        assert!(m.forward(&array![[1.0, 2.0]], &mut rng).is_err());
        let (_, tape) = m.forward(&array![[1.0, 2.0, 3.0]], &mut rng).unwrap();
        assert!(m.backward(&tape, &[None]).is_err());
        assert!(m.backward(&tape, &[Some(Array2::zeros((2, 2))), None]).is_err());
    }

    /// Central differences on `L = Σ c ⊙ outputs` against the reverse pass,
    /// with the dropout masks frozen by reseeding.
    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut m = small(100 + seed, 0.3);
            let mut rng = stream(seed, Purpose::Standalone, 1);
            let x = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-2.0..2.0));
            let coef: Vec<Array2<f64>> = m
                .heads
                .iter()
                .map(|h| Array2::from_shape_simple_fn((4, h.layer.n_out()), || rng.random_range(-1.0..1.0)))
                .collect();
            let loss = |m: &Mlp| {
                let mut r = stream(seed, Purpose::Standalone, 2);
                let (o, _) = m.forward(&x, &mut r).unwrap();
                o.iter().zip(&coef).map(|(o, c)| (o * c).sum()).sum::<f64>()
            };
            let mut r = stream(seed, Purpose::Standalone, 2);
            let (_, tape) = m.forward(&x, &mut r).unwrap();
            let grads = m.backward(&tape, &coef.iter().cloned().map(Some).collect::<Vec<_>>()).unwrap();
            let flat_grads: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();
            let h = 1e-4;
            let mut idx = 0;
            let n_tensors = m.param_slices().len();
            for t in 0..n_tensors {
                let len = m.param_slices()[t].len();
                for i in 0..len {
                    let orig = m.param_slices()[t][i];
                    m.param_slices_mut()[t][i] = orig + h;
                    let up = loss(&m);
                    m.param_slices_mut()[t][i] = orig - h;
                    let down = loss(&m);
                    m.param_slices_mut()[t][i] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = flat_grads[idx];
                    let scale = fd.abs().max(an.abs()).max(1e-3);
                    assert!((fd - an).abs() / scale < 1e-4, "seed {seed} tensor {t} idx {i}: fd {fd} an {an}");
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(lr_at(100, 100, 1e-3), 0.0);
        assert_abs_diff_eq!(lr_at(50, 100, 1e-3), 5e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(lr_at(0, 100, 0.1), 0.1, epsilon = 1e-18);
    }

    #[test]
    fn adam_first_step_is_unit() {
        let mut st = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = [0.5];
        st.step(&mut [&mut p[..]], &[&[1.0]], &[1e-3]).unwrap();
        // bias-corrected first step: m̂ = 1, v̂ = 1 → Δ = −lr/(1+eps)
        assert_abs_diff_eq!(p[0], 0.5 - 1e-3 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.5, -0.25];
        st.step(&mut [&mut p[..]], &[&[0.0, 0.0]], &[1e-3]).unwrap();
        assert_eq!(p, vec![0.5, -0.25]);
        st.step(&mut [&mut p[..]], &[&[3.0, -7.0]], &[lr_at(10, 10, 1e-3)]).unwrap();
        assert_eq!(p, vec![0.5, -0.25]);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut st = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = vec![0.5];
        assert!(st.step(&mut [&mut p[..]], &[&[f64::NAN]], &[1e-3]).is_err());
        assert_eq!(p, vec![0.5]);
        assert_eq!(st.steps, 0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let st = AdamState::new(
            AdamConfig {
                clip_norm: 1.5,
                ..Default::default()
            },
            &[3, 1],
        );
        let mut g = vec![vec![3.0, -4.0, 12.0], vec![5.0]];
        let before = st.clip(&mut g);
        assert_abs_diff_eq!(before, (9.0f64 + 16.0 + 144.0 + 25.0).sqrt(), epsilon = 1e-12);
        let after = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        assert!(after <= 1.5 + 1e-12);
    }
}
