//! Continuous GFlowNet: model, trajectories and balance losses.
//!
//! Policies act on displacements: a forward step from `s_t` draws `Δ` from the
//! forward head evaluated at `(s_t, t)` and moves to `s_t + Δ` (wrapped on a
//! torus). The backward head at `(s_{t+1}, t+1)` is a density over
//! `s_t − s_{t+1}`. The backward step into the source is a point mass and
//! contributes nothing to any loss.
//!
//! Losses are written over the per-transition log-densities `pf`, `pb` and a
//! log-flow sequence `F₀ … F_n` with `F₀ = log Z` and `F_n = log r(s_n)`
//! (clipped). Intermediate flows come from the flow head.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads, Mode};
use crate::policy::HeadSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Tb,
    Db,
    Stb { lambda: f64 },
}

impl LossKind {
    pub const NAMES: &'static str = "tb, db, stb";
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tb" => Ok(LossKind::Tb),
            "db" => Ok(LossKind::Db),
            "stb" => Ok(LossKind::Stb { lambda: 0.9 }),
            _ => Err(Error::UnknownName {
                kind: "loss",
                name: s.to_string(),
                expected: LossKind::NAMES,
            }),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Tb => f.write_str("tb"),
            LossKind::Db => f.write_str("db"),
            LossKind::Stb { .. } => f.write_str("stb"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `s₀ … s_n`.
    pub states: Vec<Vec<f64>>,
    pub logpf: Vec<f64>,
    /// `logpb[0]` belongs to the point mass at the source and is always 0.
    pub logpb: Vec<f64>,
    pub log_reward: f64,
    /// Forward head that generated the trajectory, if any.
    pub head: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.logpf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logpf.is_empty()
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory has states")
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.states.len() != horizon + 1 || self.logpf.len() != horizon || self.logpb.len() != horizon {
            return Err(Error::ShapeMismatch(format!(
                "trajectory needs {} states and {} transitions",
                horizon + 1,
                horizon
            )));
        }
        let all = self.logpf.iter().chain(&self.logpb).chain(std::iter::once(&self.log_reward));
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory log-density"));
        }
        Ok(())
    }
}

/// Loss value and its partial derivatives with respect to `pf`, `pb` and `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceGrad {
    pub loss: f64,
    pub d_pf: Vec<f64>,
    pub d_pb: Vec<f64>,
    pub d_flow: Vec<f64>,
}

impl BalanceGrad {
    fn zeros(n: usize) -> Self {
        BalanceGrad {
            loss: 0.0,
            d_pf: vec![0.0; n],
            d_pb: vec![0.0; n],
            d_flow: vec![0.0; n + 1],
        }
    }
}

/// `(F₀ + Σ pf − F_n − Σ pb)²`.
pub fn tb_loss(pf: &[f64], pb: &[f64], flow: &[f64]) -> BalanceGrad {
    let n = pf.len();
    let r = flow[0] + pf.iter().sum::<f64>() - flow[n] - pb.iter().sum::<f64>();
    let mut g = BalanceGrad::zeros(n);
    g.loss = r * r;
    g.d_pf.fill(2.0 * r);
    g.d_pb.fill(-2.0 * r);
    g.d_flow[0] = 2.0 * r;
    g.d_flow[n] = -2.0 * r;
    g
}

/// `Σ_t (F_t + pf_t − F_{t+1} − pb_t)²`.
pub fn db_loss(pf: &[f64], pb: &[f64], flow: &[f64]) -> BalanceGrad {
    let n = pf.len();
    let mut g = BalanceGrad::zeros(n);
    for t in 0..n {
        let r = flow[t] + pf[t] - flow[t + 1] - pb[t];
        g.loss += r * r;
        g.d_pf[t] += 2.0 * r;
        g.d_pb[t] -= 2.0 * r;
        g.d_flow[t] += 2.0 * r;
        g.d_flow[t + 1] -= 2.0 * r;
    }
    g
}

/// `Σ_{i<j} λ^{j−i} r_{ij}² / Σ_{i<j} λ^{j−i}` with
/// `r_{ij} = F_i + Σ_{i≤t<j}(pf_t − pb_t) − F_j`.
pub fn stb_loss(pf: &[f64], pb: &[f64], flow: &[f64], lambda: f64) -> Result<BalanceGrad> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let n = pf.len();
    let mut g = BalanceGrad::zeros(n);
    let mut norm = 0.0;
    for i in 0..n {
        for j in i + 1..=n {
            norm += lambda.powi((j - i) as i32);
        }
    }
    for i in 0..n {
        let mut acc = flow[i];
        for j in i + 1..=n {
            acc += pf[j - 1] - pb[j - 1];
            let r = acc - flow[j];
            let w = lambda.powi((j - i) as i32) / norm;
            g.loss += w * r * r;
            let d = 2.0 * w * r;
            for t in i..j {
                g.d_pf[t] += d;
                g.d_pb[t] -= d;
            }
            g.d_flow[i] += d;
            g.d_flow[j] -= d;
        }
    }
    Ok(g)
}

pub fn balance_loss(kind: LossKind, pf: &[f64], pb: &[f64], flow: &[f64]) -> Result<BalanceGrad> {
    if pb.len() != pf.len() || flow.len() != pf.len() + 1 {
        return Err(Error::ShapeMismatch("balance terms have inconsistent lengths".into()));
    }
    match kind {
        LossKind::Tb => Ok(tb_loss(pf, pb, flow)),
        LossKind::Db => Ok(db_loss(pf, pb, flow)),
        LossKind::Stb { lambda } => stb_loss(pf, pb, flow, lambda),
    }
}

/// Network, learnable `log Z` and the head reparameterisation.
#[derive(Clone, Debug, PartialEq)]
pub struct GfnModel {
    pub mlp: Mlp,
    pub log_z: f64,
    pub head: HeadSpec,
    /// Number of forward heads (more than one for Thompson sampling).
    pub forward_heads: usize,
}

/// Gradients of every model parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub mlp: MlpGrads,
    pub log_z: f64,
}

/// Index of the backward head in the network's head list.
fn backward_index(k: usize) -> usize {
    k
}

fn flow_index(k: usize) -> usize {
    k + 1
}

impl GfnModel {
    pub fn new<R: Rng + ?Sized>(
        env: &Environment,
        head: HeadSpec,
        hidden: usize,
        layers: usize,
        dropout: f64,
        forward_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if head.kind.dim() != env.dim() {
            return Err(Error::DimensionMismatch {
                expected: env.dim(),
                got: head.kind.dim(),
            });
        }
        if head.kind.is_periodic() != env.space.is_torus() {
            return Err(Error::InvalidParameter("policy kind does not match the environment space".into()));
        }
        if forward_heads == 0 {
            return Err(Error::InvalidParameter("need at least one forward head".into()));
        }
        let names: Vec<String> = (0..forward_heads)
            .map(|k| format!("pf{k}"))
            .chain(["pb".to_string(), "flow".to_string()])
            .collect();
        let widths: Vec<(&str, usize)> = names
            .iter()
            .map(|n| (n.as_str(), if n == "flow" { 1 } else { head.raw_len() }))
            .collect();
        let mlp = Mlp::new(env.input_dim(), hidden, layers, &widths, dropout, rng)?;
        Ok(GfnModel {
            mlp,
            log_z: 0.0,
            head,
            forward_heads,
        })
    }

    fn check_head(&self, k: usize) -> Result<()> {
        if k >= self.forward_heads {
            return Err(Error::InvalidParameter(format!(
                "forward head {k} out of range ({} heads)",
                self.forward_heads
            )));
        }
        Ok(())
    }

    fn encode(env: &Environment, states: &[(&[f64], usize)]) -> Array2<f64> {
        let d = env.input_dim();
        let mut x = Array2::zeros((states.len(), d));
        for (row, (s, t)) in x.rows_mut().into_iter().zip(states) {
            env.encode_into(s, *t, row.into_slice().expect("row-major"));
        }
        x
    }

    /// Forward rollouts from the source, one per entry of `heads`, with the
    /// forward and backward policies widened by `noise`. Runs the network in
    /// evaluation mode.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        env: &Environment,
        heads: &[usize],
        noise: f64,
        rng: &mut R,
    ) -> Result<Vec<Trajectory>> {
        let n = env.horizon;
        let (states, logpf) = self.walk(env, heads, noise, rng)?;
        let logpb = self.backward_log_densities(env, &states, noise)?;
        states
            .into_iter()
            .zip(logpf)
            .zip(logpb)
            .zip(heads)
            .map(|(((states, logpf), logpb), &k)| {
                let log_reward = env.log_reward_clipped(&states[n]);
                let tr = Trajectory {
                    states,
                    logpf,
                    logpb,
                    log_reward,
                    head: Some(k),
                };
                tr.validate(n)?;
                Ok(tr)
            })
            .collect()
    }

    /// Terminal states of noise-free rollouts, one per entry of `heads`.
    pub fn sample_terminals<R: Rng + ?Sized>(
        &self,
        env: &Environment,
        heads: &[usize],
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let (states, _) = self.walk(env, heads, 0.0, rng)?;
        Ok(states.into_iter().map(|mut s| s.pop().expect("non-empty")).collect())
    }

    /// State sequences and forward log-densities of batched rollouts.
    #[allow(clippy::type_complexity)]
    fn walk<R: Rng + ?Sized>(
        &self,
        env: &Environment,
        heads: &[usize],
        noise: f64,
        rng: &mut R,
    ) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
        for &k in heads {
            self.check_head(k)?;
        }
        let b = heads.len();
        let n = env.horizon;
        let mut states: Vec<Vec<Vec<f64>>> = vec![vec![env.source.clone()]; b];
        let mut logpf = vec![Vec::with_capacity(n); b];
        for t in 0..n {
            let rows: Vec<(&[f64], usize)> = states.iter().map(|s| (s[t].as_slice(), t)).collect();
            let out = self.predict(&Self::encode(env, &rows))?;
            for i in 0..b {
                let pol = self.head.to_mixture(out[heads[i]].row(i).as_slice().expect("row-major"))?.with_noise(noise);
                let delta = pol.sample(rng);
                logpf[i].push(pol.log_density(&delta)?);
                let mut next: Vec<f64> = states[i][t].iter().zip(&delta).map(|(a, d)| a + d).collect();
                env.space.wrap_in_place(&mut next)?;
                states[i].push(next);
            }
        }
        Ok((states, logpf))
    }

    /// Trajectories ending at each of `terminals`, built backwards with the
    /// backward policy (widened by `noise`) and ending at the source. `logpf`
    /// is evaluated along the realised path with forward head 0.
    pub fn backward_sample<R: Rng + ?Sized>(
        &self,
        env: &Environment,
        terminals: &[Vec<f64>],
        noise: f64,
        rng: &mut R,
    ) -> Result<Vec<Trajectory>> {
        let n = env.horizon;
        let b = terminals.len();
        for x in terminals {
            if x.len() != env.dim() {
                return Err(Error::DimensionMismatch {
                    expected: env.dim(),
                    got: x.len(),
                });
            }
        }
        let mut rev: Vec<Vec<Vec<f64>>> = terminals.iter().map(|x| vec![x.clone()]).collect();
        let kb = backward_index(self.forward_heads);
        for t in (2..=n).rev() {
            let rows: Vec<(&[f64], usize)> = rev.iter().map(|s| (s.last().expect("non-empty").as_slice(), t)).collect();
            let out = self.predict(&Self::encode(env, &rows))?;
            for i in 0..b {
                let pol = self.head.to_mixture(out[kb].row(i).as_slice().expect("row-major"))?.with_noise(noise);
                let delta = pol.sample(rng);
                let cur = rev[i].last().expect("non-empty");
                let mut prev: Vec<f64> = cur.iter().zip(&delta).map(|(a, d)| a + d).collect();
                env.space.wrap_in_place(&mut prev)?;
                rev[i].push(prev);
            }
        }
        let states: Vec<Vec<Vec<f64>>> = rev
            .into_iter()
            .map(|mut s| {
                s.push(env.source.clone());
                s.reverse();
                s
            })
            .collect();
        let logpb = self.backward_log_densities(env, &states, noise)?;
        let logpf = self.forward_log_densities(env, &states, 0)?;
        states
            .into_iter()
            .zip(logpf)
            .zip(logpb)
            .map(|((states, logpf), logpb)| {
                let log_reward = env.log_reward_clipped(&states[n]);
                let tr = Trajectory {
                    states,
                    logpf,
                    logpb,
                    log_reward,
                    head: None,
                };
                tr.validate(n)?;
                Ok(tr)
            })
            .collect()
    }

    /// Trajectory from an explicit state sequence, densities evaluated with
    /// forward head `head` and no noise.
    pub fn assemble(&self, env: &Environment, states: Vec<Vec<f64>>, head: usize) -> Result<Trajectory> {
        self.check_head(head)?;
        let all = vec![states];
        let logpf = self.forward_log_densities(env, &all, head)?.remove(0);
        let logpb = self.backward_log_densities(env, &all, 0.0)?.remove(0);
        let states = all.into_iter().next().expect("one");
        let log_reward = env.log_reward_clipped(states.last().ok_or(Error::Empty("state sequence"))?);
        let tr = Trajectory {
            states,
            logpf,
            logpb,
            log_reward,
            head: Some(head),
        };
        tr.validate(env.horizon)?;
        Ok(tr)
    }

    /// Network outputs without dropout, whatever the mode.
    fn predict(&self, x: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        self.mlp.predict(x)
    }

    fn forward_log_densities(&self, env: &Environment, states: &[Vec<Vec<f64>>], head: usize) -> Result<Vec<Vec<f64>>> {
        let n = env.horizon;
        let rows: Vec<(&[f64], usize)> = states
            .iter()
            .flat_map(|s| (0..n).map(move |t| (s[t].as_slice(), t)))
            .collect();
        let out = self.predict(&Self::encode(env, &rows))?;
        states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (0..n)
                    .map(|t| {
                        let pol = self.head.to_mixture(out[head].row(i * n + t).as_slice().expect("row-major"))?;
                        pol.log_density(&env.space.displacement(&s[t], &s[t + 1])?)
                    })
                    .collect()
            })
            .collect()
    }

    fn backward_log_densities(&self, env: &Environment, states: &[Vec<Vec<f64>>], noise: f64) -> Result<Vec<Vec<f64>>> {
        let n = env.horizon;
        let kb = backward_index(self.forward_heads);
        let rows: Vec<(&[f64], usize)> = states
            .iter()
            .flat_map(|s| (2..=n).map(move |t| (s[t].as_slice(), t)))
            .collect();
        let out = if rows.is_empty() {
            Vec::new()
        } else {
            self.predict(&Self::encode(env, &rows))?
        };
        states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut lp = vec![0.0];
                for t in 2..=n {
                    let raw = out[kb].row(i * (n - 1) + t - 2);
                    let pol = self.head.to_mixture(raw.as_slice().expect("row-major"))?.with_noise(noise);
                    lp.push(pol.log_density(&env.space.displacement(&s[t], &s[t - 1])?)?);
                }
                Ok(lp)
            })
            .collect()
    }

    /// Total loss over `pairs` of (trajectory index, forward head) with
    /// gradients. The network runs in its current mode; dropout masks come
    /// from `rng`. Returns the per-pair losses alongside the gradients.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        env: &Environment,
        trajs: &[Trajectory],
        pairs: &[(usize, usize)],
        kind: LossKind,
        rng: &mut R,
    ) -> Result<(Vec<f64>, ModelGrads)> {
        let n = env.horizon;
        let k_heads = self.forward_heads;
        for &(i, k) in pairs {
            self.check_head(k)?;
            if i >= trajs.len() {
                return Err(Error::InvalidParameter(format!("trajectory index {i} out of range")));
            }
        }
        let mut grads = ModelGrads {
            mlp: MlpGrads::zeros_like(&self.mlp),
            log_z: 0.0,
        };
        if pairs.is_empty() {
            return Ok((Vec::new(), grads));
        }
        for tr in trajs {
            tr.validate(n)?;
        }
        // rows (i, t) for t = 0..=n, trajectory-major
        let rows: Vec<(&[f64], usize)> = trajs
            .iter()
            .flat_map(|tr| (0..=n).map(move |t| (tr.states[t].as_slice(), t)))
            .collect();
        let x = Self::encode(env, &rows);
        let (out, tape) = self.mlp.forward(&x, rng)?;
        let raw_len = self.head.raw_len();
        let nh = self.mlp.heads.len();
        let mut head_grads: Vec<Option<Array2<f64>>> = vec![None; nh];
        let kb = backward_index(k_heads);
        let kf = flow_index(k_heads);
        let row = |i: usize, t: usize| i * (n + 1) + t;

        // backward terms are shared by every pair on a trajectory
        let mut pb_cache: Vec<Option<Vec<(f64, Vec<f64>)>>> = vec![None; trajs.len()];
        let mut losses = Vec::with_capacity(pairs.len());
        for &(i, k) in pairs {
            let tr = &trajs[i];
            if pb_cache[i].is_none() {
                let mut v = vec![(0.0, Vec::new())];
                for t in 1..n {
                    let raw = out[kb].row(row(i, t + 1));
                    let d = env.space.displacement(&tr.states[t + 1], &tr.states[t])?;
                    v.push(self.head.log_density_grad(raw.as_slice().expect("row-major"), &d)?);
                }
                pb_cache[i] = Some(v);
            }
            let pbs = pb_cache[i].as_ref().expect("filled");
            let mut pfs = Vec::with_capacity(n);
            for t in 0..n {
                let raw = out[k].row(row(i, t));
                let d = env.space.displacement(&tr.states[t], &tr.states[t + 1])?;
                pfs.push(self.head.log_density_grad(raw.as_slice().expect("row-major"), &d)?);
            }
            let pf: Vec<f64> = pfs.iter().map(|p| p.0).collect();
            let pb: Vec<f64> = pbs.iter().map(|p| p.0).collect();
            let mut flow = Vec::with_capacity(n + 1);
            flow.push(self.log_z);
            for t in 1..n {
                flow.push(out[kf][[row(i, t), 0]]);
            }
            flow.push(tr.log_reward);
            let g = balance_loss(kind, &pf, &pb, &flow)?;
            if !g.loss.is_finite() {
                return Err(Error::NonFiniteTrajectory {
                    index: i,
                    head: k,
                    dump: format!("{tr:?}"),
                });
            }
            losses.push(g.loss);
            grads.log_z += g.d_flow[0];
            let hf = head_grads[k].get_or_insert_with(|| Array2::zeros((x.nrows(), raw_len)));
            for t in 0..n {
                let mut r = hf.row_mut(row(i, t));
                for (a, gv) in r.iter_mut().zip(&pfs[t].1) {
                    *a += g.d_pf[t] * gv;
                }
            }
            let hb = head_grads[kb].get_or_insert_with(|| Array2::zeros((x.nrows(), raw_len)));
            for t in 1..n {
                let mut r = hb.row_mut(row(i, t + 1));
                for (a, gv) in r.iter_mut().zip(&pbs[t].1) {
                    *a += g.d_pb[t] * gv;
                }
            }
            if n > 1 && g.d_flow[1..n].iter().any(|&v| v != 0.0) {
                let hfl = head_grads[kf].get_or_insert_with(|| Array2::zeros((x.nrows(), 1)));
                for t in 1..n {
                    hfl[[row(i, t), 0]] += g.d_flow[t];
                }
            }
        }
        grads.mlp = self.mlp.backward(&tape, &head_grads)?;
        Ok((losses, grads))
    }

    /// Loss of one trajectory under forward head `head` with the network in
    /// evaluation mode.
    pub fn loss(&self, env: &Environment, tr: &Trajectory, head: usize, kind: LossKind) -> Result<f64> {
        let mut m = self.clone();
        m.mlp.mode = Mode::Eval;
        let mut rng = crate::rng::stream(0, crate::rng::Purpose::Standalone, 0);
        let (l, _) = m.loss_and_grad(env, std::slice::from_ref(tr), &[(0, head)], kind, &mut rng)?;
        Ok(l[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;

    fn small_line_model(seed: u64) -> (Environment, GfnModel) {
        let env = Environment::line();
        let head = HeadSpec::new(PolicyKind::Gauss1D, (-14.0, 14.0), (0.1, 1.0)).unwrap();
        let mut rng = stream(seed, Purpose::ModelInit, 0);
        let m = GfnModel::new(&env, head, 16, 2, 0.0, 1, &mut rng).unwrap();
        (env, m)
    }

    #[test]
    fn tb_zero_at_balance() {
        let pf = [-1.3, 0.2, -0.7];
        let pb = [0.0, -0.4, 0.9];
        let log_r = -2.5;
        let log_z = log_r + pb.iter().sum::<f64>() - pf.iter().sum::<f64>();
        let g = tb_loss(&pf, &pb, &[log_z, 0.0, 0.0, log_r]);
        assert!(g.loss < 1e-18);
    }

    #[test]
    fn tb_shift_invariance() {
        let pf = [-1.3, 0.2, -0.7];
        let pb = [0.0, -0.4, 0.9];
        let a = tb_loss(&pf, &pb, &[0.3, 0.0, 0.0, -2.0]).loss;
        let c = 0.37;
        let pf2: Vec<f64> = pf.iter().map(|v| v + c).collect();
        let b = tb_loss(&pf2, &pb, &[0.3 - 3.0 * c, 0.0, 0.0, -2.0]).loss;
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn db_single_transition() {
        let g = db_loss(&[0.5], &[0.0], &[1.0, -0.25]);
        assert_abs_diff_eq!(g.loss, (1.0f64 + 0.5 + 0.25).powi(2), epsilon = 1e-15);
    }

    #[test]
    fn stb_rejects_bad_lambda() {
        assert!(stb_loss(&[0.0], &[0.0], &[0.0, 0.0], 0.0).is_err());
        assert!(stb_loss(&[0.0], &[0.0], &[0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn balance_grads_match_differences() {
        let mut rng = stream(9, Purpose::Standalone, 0);
        for kind in [LossKind::Tb, LossKind::Db, LossKind::Stb { lambda: 0.9 }] {
            let pf: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let pb: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fl: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = balance_loss(kind, &pf, &pb, &fl).unwrap();
            let h = 1e-6;
            for (which, base, an) in [(0, &pf, &g.d_pf), (1, &pb, &g.d_pb), (2, &fl, &g.d_flow)] {
                for j in 0..base.len() {
                    let eval = |delta: f64| {
                        let mut v = [pf.clone(), pb.clone(), fl.clone()];
                        v[which][j] += delta;
                        balance_loss(kind, &v[0], &v[1], &v[2]).unwrap().loss
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    assert_abs_diff_eq!(fd, an[j], epsilon = 1e-6);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn losses_are_non_negative(
            n in 1usize..6,
            vals in proptest::collection::vec(-20.0f64..20.0, 18),
            lambda in 0.01f64..5.0,
        ) {
            let pf = &vals[..n];
            let mut pb = vals[6..6 + n].to_vec();
            pb[0] = 0.0;
            let fl = &vals[12..13 + n];
            for kind in [LossKind::Tb, LossKind::Db, LossKind::Stb { lambda }] {
                let g = balance_loss(kind, pf, &pb, fl).unwrap();
                proptest::prop_assert!(g.loss >= 0.0 && g.loss.is_finite());
            }
        }
    }

    #[test]
    fn rollout_shape_and_determinism() {
        let (env, m) = small_line_model(1);
        let run = |seed| {
            let mut rng = stream(seed, Purpose::Episode, 0);
            m.rollout(&env, &[0; 5], 0.0, &mut rng).unwrap()
        };
        let a = run(3);
        assert_eq!(a, run(3));
        for tr in &a {
            assert_eq!(tr.states.len(), 4);
            assert_eq!(tr.logpb[0], 0.0);
            assert_eq!(tr.states[0], env.source);
        }
    }

    #[test]
    fn backward_sample_endpoints() {
        let (env, m) = small_line_model(2);
        let mut rng = stream(0, Purpose::Episode, 0);
        let terms = vec![vec![20.0], vec![-2.0], vec![7.5]];
        let trs = m.backward_sample(&env, &terms, 0.0, &mut rng).unwrap();
        for (tr, x) in trs.iter().zip(&terms) {
            assert_eq!(tr.terminal(), x.as_slice());
            assert_eq!(tr.states[0], env.source);
            assert_eq!(tr.logpb[0], 0.0);
        }
    }

    #[test]
    fn path_functional() {
        let (env, m) = small_line_model(3);
        let mut rng = stream(0, Purpose::Episode, 0);
        let tr = m.backward_sample(&env, &[vec![1.5]], 0.0, &mut rng).unwrap().remove(0);
        let manual = m.assemble(&env, tr.states.clone(), 0).unwrap();
        for (a, b) in tr.logpf.iter().zip(&manual.logpf) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in tr.logpb.iter().zip(&manual.logpb) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let l1 = m.loss(&env, &tr, 0, LossKind::Tb).unwrap();
        let l2 = m.loss(&env, &manual, 0, LossKind::Tb).unwrap();
        assert_eq!(l1, l2);
        let direct = tb_loss(&tr.logpf, &tr.logpb, &[m.log_z, 0.0, 0.0, tr.log_reward]).loss;
        assert_abs_diff_eq!(l1, direct, epsilon = 1e-9);
    }

    #[test]
    fn torus_rollouts_stay_canonical() {
        let env = Environment::synthetic_torus();
        let head = HeadSpec::new(PolicyKind::VonMises2D, (-3.2, 3.2), (0.0, 5.0)).unwrap();
        let mut rng = stream(0, Purpose::ModelInit, 0);
        let m = GfnModel::new(&env, head, 16, 2, 0.2, 2, &mut rng).unwrap();
        let trs = m.rollout(&env, &[0, 1, 1, 0], 0.5, &mut rng).unwrap();
        for tr in trs {
            assert!(tr.states.iter().all(|s| env.space.contains(s)));
        }
    }

    #[test]
    fn model_gradients_match_differences() {
        let env = Environment::synthetic_torus();
        let head = HeadSpec::new(PolicyKind::VonMises2D, (-3.2, 3.2), (0.0, 5.0)).unwrap();
        let mut rng = stream(5, Purpose::ModelInit, 0);
        let mut m = GfnModel::new(&env, head, 8, 1, 0.0, 2, &mut rng).unwrap();
        m.log_z = 0.4;
        let trs = m.rollout(&env, &[0, 1], 0.3, &mut rng).unwrap();
        let pairs = [(0, 0), (0, 1), (1, 1)];
        for kind in [LossKind::Tb, LossKind::Db, LossKind::Stb { lambda: 0.9 }] {
            let total = |m: &GfnModel| {
                let mut r = stream(0, Purpose::Standalone, 0);
                m.loss_and_grad(&env, &trs, &pairs, kind, &mut r).unwrap().0.iter().sum::<f64>()
            };
            let (_, g) = m.loss_and_grad(&env, &trs, &pairs, kind, &mut rng).unwrap();
            let h = 1e-5;
            let mut mz = m.clone();
            mz.log_z += h;
            let up = total(&mz);
            mz.log_z -= 2.0 * h;
            let fd = (up - total(&mz)) / (2.0 * h);
            assert!((fd - g.log_z).abs() < 1e-5 * fd.abs().max(1.0));
            let flat: Vec<f64> = g.mlp.slices().iter().flat_map(|s| s.iter().copied()).collect();
            let mut idx = 0;
            for t in 0..m.mlp.param_slices().len() {
                for i in 0..m.mlp.param_slices()[t].len() {
                    let mut mp = m.clone();
                    mp.mlp.param_slices_mut()[t][i] += h;
                    let up = total(&mp);
                    mp.mlp.param_slices_mut()[t][i] -= 2.0 * h;
                    let down = total(&mp);
                    let fd = (up - down) / (2.0 * h);
                    let an = flat[idx];
                    assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-2), "{kind:?} {t} {i}: {fd} vs {an}");
                    idx += 1;
                }
            }
        }
    }
}
