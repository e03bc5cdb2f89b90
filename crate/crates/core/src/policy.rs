//! Trust-region policy optimization and the action-norm reward penalty.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    l2_norm, rollout_sessions, CustomerProfile, EngineAction, EnginePolicy, Session,
};
use crate::mail::VirtualEnvironment;
use crate::nn::{ModelCheckpoint, Mlp, NetConfig, Optimizer, Output, Tensor};
use crate::rng::{derive_seed, stream, Domain, SimRng};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AncConfig {
    pub rho: f64,
    pub mu: f64,
}

impl Default for AncConfig {
    fn default() -> Self {
        AncConfig { rho: 1.0, mu: 0.01 }
    }
}

/// Attenuate a reward by how far the action norm exceeds `mu`.
pub fn anc_shape(reward: f64, action: &EngineAction, cfg: &AncConfig) -> f64 {
    anc_shape_norm(reward, action.norm(), cfg)
}

pub fn anc_shape_norm(reward: f64, norm: f64, cfg: &AncConfig) -> f64 {
    reward / (1.0 + cfg.rho * (norm - cfg.mu).max(0.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A x = b` for symmetric positive-definite `A` given only products.
pub fn conjugate_gradient<F>(mut avp: F, b: &[f64], iters: usize, tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr.sqrt() <= tol {
            break;
        }
        let ap = avp(&p)?;
        let pap = dot(&p, &ap);
        if !(pap.is_finite() && pap > 0.0) {
            if pap.is_finite() {
                break;
            }
            return Err(Error::NonFinite("conjugate gradient curvature".into()));
        }
        let alpha = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conjugate gradient solution".into()));
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrpoConfig {
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Environment steps collected per iteration.
    pub batch_size: usize,
    /// Rows used for Fisher-vector products (0 = the whole batch).
    pub fvp_rows: usize,
    pub value_epochs: usize,
    pub value_lr: f64,
    pub iterations: usize,
    pub init_std: f64,
    pub net: NetConfig,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        TrpoConfig {
            max_kl: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_factor: 0.5,
            max_backtracks: 10,
            gamma: 0.99,
            lambda: 0.95,
            batch_size: 8192,
            fvp_rows: 2048,
            value_epochs: 3,
            value_lr: 1e-3,
            iterations: 80,
            init_std: 0.3,
            net: NetConfig::default(),
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_kl > 0.0) {
            return Err(Error::invalid("trpo: max_kl must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::invalid("trpo: gamma and lambda must lie in (0, 1]"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::invalid("trpo: backtrack_factor must lie in (0, 1)"));
        }
        if self.batch_size == 0 || !(self.init_std > 0.0) || self.cg_damping < 0.0 {
            return Err(Error::invalid("trpo: batch_size and init_std must be positive"));
        }
        Ok(())
    }
}

/// A differentiable stochastic policy over a batch type.
///
/// Sums (not means) are reported so composite policies can add their parts.
pub trait TrpoPolicy: Clone {
    type Batch;

    fn batch_len(batch: &Self::Batch) -> usize;
    fn select(batch: &Self::Batch, rows: &[usize]) -> Self::Batch;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    /// Log-probability of each batch row's action.
    fn log_probs(&self, batch: &Self::Batch) -> Result<Vec<f64>>;
    /// `Σ_i w_i ∇ log π(a_i | s_i)`.
    fn logprob_grad(&self, batch: &Self::Batch, weights: &[f64]) -> Result<Vec<f64>>;
    /// Opaque snapshot of the per-row action distributions.
    fn dist(&self, batch: &Self::Batch) -> Result<Vec<f64>>;
    /// `Σ_i KL(old_i ‖ self_i)`.
    fn kl_sum(&self, old: &[f64], batch: &Self::Batch) -> Result<f64>;
    /// `Σ_i J_iᵀ F_i J_i v`, the Fisher information summed over rows.
    fn fvp_sum(&self, batch: &Self::Batch, v: &[f64]) -> Result<Vec<f64>>;
}

/// Rows of observations with continuous actions.
#[derive(Debug, Clone, Default)]
pub struct GaussianBatch {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rows: usize,
}

/// Diagonal Gaussian with a state-dependent mean and a free log-stddev.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    /// The output layer starts at zero, so the initial policy is `N(0, std²)`.
    pub fn new(obs_dim: usize, action_dim: usize, net: &NetConfig, init_std: f64, rng: &mut SimRng) -> Result<Self> {
        let mut mean = net.build(obs_dim, action_dim, Output::Identity, rng)?;
        let last = mean.num_layers() - 1;
        let w = mean.weight(last);
        let b = mean.bias(last);
        mean.set_layer(last, &Tensor::zeros(w.shape().to_vec()), &Tensor::zeros(b.shape().to_vec()))?;
        Ok(GaussianPolicy {
            mean,
            log_std: vec![init_std.ln(); action_dim],
        })
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn means(&self, obs: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.mean.forward_rows(obs, rows)
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Sample one action per row with its own stream.
    pub fn sample(&self, obs: &[f64], rngs: &mut [SimRng]) -> Result<Vec<f64>> {
        let mut mu = self.means(obs, rngs.len())?;
        let std = self.std();
        for (row, rng) in mu.chunks_exact_mut(std.len()).zip(rngs.iter_mut()) {
            for (m, s) in row.iter_mut().zip(&std) {
                *m += s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(mu)
    }

    pub fn insert_into(&self, ck: &mut ModelCheckpoint, prefix: &str) -> Result<()> {
        ck.insert_mlp(&format!("{prefix}.mean"), &self.mean);
        ck.insert(format!("{prefix}.log_std"), Tensor::vector(self.log_std.clone())?);
        Ok(())
    }

    pub fn load_from(&mut self, ck: &ModelCheckpoint, prefix: &str) -> Result<()> {
        ck.load_mlp(&format!("{prefix}.mean"), &mut self.mean)?;
        let t = ck.get(&format!("{prefix}.log_std"))?;
        if t.len() != self.log_std.len() {
            return Err(Error::Format {
                format: "checkpoint",
                detail: format!("{prefix}.log_std has {} entries", t.len()),
            });
        }
        self.log_std = t.data().to_vec();
        Ok(())
    }
}

impl TrpoPolicy for GaussianPolicy {
    type Batch = GaussianBatch;

    fn batch_len(batch: &GaussianBatch) -> usize {
        batch.rows
    }

    fn select(batch: &GaussianBatch, rows: &[usize]) -> GaussianBatch {
        let od = batch.obs.len() / batch.rows.max(1);
        let ad = batch.actions.len() / batch.rows.max(1);
        GaussianBatch {
            obs: rows.iter().flat_map(|&r| batch.obs[r * od..(r + 1) * od].iter().copied()).collect(),
            actions: rows.iter().flat_map(|&r| batch.actions[r * ad..(r + 1) * ad].iter().copied()).collect(),
            rows: rows.len(),
        }
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.mean.params().to_vec();
        p.extend_from_slice(&self.log_std);
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let n = self.mean.num_params();
        if params.len() != n + self.log_std.len() {
            return Err(Error::Shape {
                context: "gaussian policy params",
                expected: (n + self.log_std.len()).to_string(),
                got: params.len().to_string(),
            });
        }
        self.mean.set_params(&params[..n])?;
        self.log_std.copy_from_slice(&params[n..]);
        Ok(())
    }

    fn log_probs(&self, b: &GaussianBatch) -> Result<Vec<f64>> {
        let mu = self.means(&b.obs, b.rows)?;
        let d = self.action_dim();
        let std = self.std();
        let norm: f64 = self.log_std.iter().sum::<f64>() + 0.5 * d as f64 * LN_2PI;
        Ok(mu
            .chunks_exact(d)
            .zip(b.actions.chunks_exact(d))
            .map(|(m, a)| {
                -m.iter()
                    .zip(a)
                    .zip(&std)
                    .map(|((mi, ai), s)| {
                        let z = (ai - mi) / s;
                        0.5 * z * z
                    })
                    .sum::<f64>()
                    - norm
            })
            .collect())
    }

    fn logprob_grad(&self, b: &GaussianBatch, w: &[f64]) -> Result<Vec<f64>> {
        let trace = self.mean.trace(&b.obs, b.rows)?;
        let d = self.action_dim();
        let var: Vec<f64> = self.log_std.iter().map(|l| (2.0 * l).exp()).collect();
        let mut gmu = vec![0.0; b.rows * d];
        let mut gls = vec![0.0; d];
        for r in 0..b.rows {
            for j in 0..d {
                let diff = b.actions[r * d + j] - trace.output[r * d + j];
                gmu[r * d + j] = w[r] * diff / var[j];
                gls[j] += w[r] * (diff * diff / var[j] - 1.0);
            }
        }
        let mut g = self.mean.backward_logits(&trace, &gmu, false)?.params;
        g.extend(gls);
        Ok(g)
    }

    fn dist(&self, b: &GaussianBatch) -> Result<Vec<f64>> {
        let mut mu = self.means(&b.obs, b.rows)?;
        mu.extend_from_slice(&self.log_std);
        Ok(mu)
    }

    fn kl_sum(&self, old: &[f64], b: &GaussianBatch) -> Result<f64> {
        let d = self.action_dim();
        let (mu_old, ls_old) = old.split_at(b.rows * d);
        let mu = self.means(&b.obs, b.rows)?;
        let mut kl = 0.0;
        for j in 0..d {
            let (lo, ln) = (ls_old[j], self.log_std[j]);
            let (vo, vn) = ((2.0 * lo).exp(), (2.0 * ln).exp());
            let mut sq = 0.0;
            for r in 0..b.rows {
                let diff = mu_old[r * d + j] - mu[r * d + j];
                sq += diff * diff;
            }
            kl += b.rows as f64 * (ln - lo + vo / (2.0 * vn) - 0.5) + sq / (2.0 * vn);
        }
        Ok(kl)
    }

    fn fvp_sum(&self, b: &GaussianBatch, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.mean.num_params();
        let d = self.action_dim();
        let trace = self.mean.trace(&b.obs, b.rows)?;
        let mut jv = self.mean.jvp_logits(&trace, &v[..n]);
        let inv_var: Vec<f64> = self.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
        for row in jv.chunks_exact_mut(d) {
            row.iter_mut().zip(&inv_var).for_each(|(x, iv)| *x *= iv);
        }
        let mut out = self.mean.backward_logits(&trace, &jv, false)?.params;
        out.extend(v[n..].iter().map(|x| 2.0 * b.rows as f64 * x));
        Ok(out)
    }
}

/// Observations with discrete action indices.
#[derive(Debug, Clone, Default)]
pub struct CategoricalBatch {
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
}

/// Softmax policy over a small discrete action set.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPolicy {
    pub net: Mlp,
}

impl CategoricalPolicy {
    pub fn new(obs_dim: usize, actions: usize, net: &NetConfig, rng: &mut SimRng) -> Result<Self> {
        Ok(CategoricalPolicy {
            net: net.build(obs_dim, actions, Output::SoftmaxBlocks(vec![actions]), rng)?,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn probs(&self, obs: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.net.forward_rows(obs, rows)
    }
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl TrpoPolicy for CategoricalPolicy {
    type Batch = CategoricalBatch;

    fn batch_len(batch: &CategoricalBatch) -> usize {
        batch.actions.len()
    }

    fn select(batch: &CategoricalBatch, rows: &[usize]) -> CategoricalBatch {
        let od = batch.obs.len() / batch.actions.len().max(1);
        CategoricalBatch {
            obs: rows.iter().flat_map(|&r| batch.obs[r * od..(r + 1) * od].iter().copied()).collect(),
            actions: rows.iter().map(|&r| batch.actions[r]).collect(),
        }
    }

    fn params(&self) -> Vec<f64> {
        self.net.params().to_vec()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    fn log_probs(&self, b: &CategoricalBatch) -> Result<Vec<f64>> {
        let k = self.num_actions();
        let trace = self.net.trace(&b.obs, b.actions.len())?;
        Ok(trace
            .logits
            .chunks_exact(k)
            .zip(&b.actions)
            .map(|(l, &a)| log_softmax_row(l)[a])
            .collect())
    }

    fn logprob_grad(&self, b: &CategoricalBatch, w: &[f64]) -> Result<Vec<f64>> {
        let k = self.num_actions();
        let rows = b.actions.len();
        let trace = self.net.trace(&b.obs, rows)?;
        let mut g = vec![0.0; rows * k];
        for r in 0..rows {
            for j in 0..k {
                let ind = (j == b.actions[r]) as u8 as f64;
                g[r * k + j] = w[r] * (ind - trace.output[r * k + j]);
            }
        }
        Ok(self.net.backward_logits(&trace, &g, false)?.params)
    }

    fn dist(&self, b: &CategoricalBatch) -> Result<Vec<f64>> {
        let trace = self.net.trace(&b.obs, b.actions.len())?;
        let k = self.num_actions();
        Ok(trace.logits.chunks_exact(k).flat_map(log_softmax_row).collect())
    }

    fn kl_sum(&self, old: &[f64], b: &CategoricalBatch) -> Result<f64> {
        let new = self.dist(b)?;
        Ok(old
            .iter()
            .zip(&new)
            .map(|(lo, ln)| lo.exp() * (lo - ln))
            .sum())
    }

    fn fvp_sum(&self, b: &CategoricalBatch, v: &[f64]) -> Result<Vec<f64>> {
        let k = self.num_actions();
        let trace = self.net.trace(&b.obs, b.actions.len())?;
        let mut jv = self.net.jvp_logits(&trace, v);
        for (t, p) in jv.chunks_exact_mut(k).zip(trace.output.chunks_exact(k)) {
            let pt = dot(p, t);
            t.iter_mut().zip(p).for_each(|(ti, pi)| *ti = pi * (*ti - pt));
        }
        Ok(self.net.backward_logits(&trace, &jv, false)?.params)
    }
}

/// State-value regression network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub net: Mlp,
}

impl ValueNet {
    pub fn new(obs_dim: usize, net: &NetConfig, rng: &mut SimRng) -> Result<Self> {
        Ok(ValueNet {
            net: net.build(obs_dim, 1, Output::Identity, rng)?,
        })
    }

    pub fn predict(&self, obs: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.net.forward_rows(obs, rows)
    }

    /// Mean squared error and its parameter gradient.
    pub fn loss_grad(&self, obs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let rows = targets.len();
        let trace = self.net.trace(obs, rows)?;
        let mut loss = 0.0;
        let g: Vec<f64> = trace
            .output
            .iter()
            .zip(targets)
            .map(|(v, t)| {
                loss += (v - t) * (v - t) / rows as f64;
                2.0 * (v - t) / rows as f64
            })
            .collect();
        Ok((loss, self.net.backward_logits(&trace, &g, false)?.params))
    }

    /// Minibatch Adam regression; returns the full-batch loss before and after.
    pub fn fit(&mut self, obs: &[f64], targets: &[f64], epochs: usize, lr: f64, opt: &mut Optimizer, rng: &mut SimRng) -> Result<(f64, f64)> {
        let rows = targets.len();
        let od = self.net.input_dim();
        let before = self.loss_grad(obs, targets)?.0;
        opt.lr = lr;
        let mut idx: Vec<usize> = (0..rows).collect();
        for _ in 0..epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(256) {
                let o: Vec<f64> = chunk.iter().flat_map(|&r| obs[r * od..(r + 1) * od].iter().copied()).collect();
                let t: Vec<f64> = chunk.iter().map(|&r| targets[r]).collect();
                let (_, g) = self.loss_grad(&o, &t)?;
                opt.step(self.net.params_mut(), &g)?;
            }
        }
        let after = self.loss_grad(obs, targets)?.0;
        Ok((before, after))
    }
}

/// Generalized advantage estimates and value targets for one trajectory.
///
/// `bootstrap` is the value of the state after the last step (0 when the
/// trajectory terminated rather than being truncated).
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Zero mean and unit variance (left centered when the spread vanishes).
pub fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    if x.is_empty() {
        return;
    }
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    let s = var.sqrt();
    x.iter_mut().for_each(|v| *v = if s > 1e-8 { (*v - m) / s } else { *v - m });
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrpoDiagnostics {
    pub accepted: bool,
    pub surrogate_improvement: f64,
    pub kl: f64,
    pub backtracks: usize,
}

/// One natural-gradient step with a KL-constrained backtracking search.
///
/// The step is kept only if the mean KL is at most `1.5·max_kl` and the
/// sampled surrogate does not decrease; otherwise parameters are restored.
pub fn trpo_step<P: TrpoPolicy>(policy: &mut P, batch: &P::Batch, advantages: &[f64], cfg: &TrpoConfig) -> Result<TrpoDiagnostics> {
    let n = P::batch_len(batch);
    if n == 0 || advantages.len() != n {
        return Err(Error::invalid("trpo step needs one advantage per batch row"));
    }
    let weights: Vec<f64> = advantages.iter().map(|a| a / n as f64).collect();
    let g = policy.logprob_grad(batch, &weights)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy gradient".into()));
    }
    if g.iter().all(|&v| v == 0.0) {
        return Ok(TrpoDiagnostics::default());
    }
    let sub;
    let fvp_batch = if cfg.fvp_rows > 0 && cfg.fvp_rows < n {
        let stride = n as f64 / cfg.fvp_rows as f64;
        let rows: Vec<usize> = (0..cfg.fvp_rows).map(|i| (i as f64 * stride) as usize).collect();
        sub = P::select(batch, &rows);
        &sub
    } else {
        batch
    };
    let m = P::batch_len(fvp_batch) as f64;
    let avp = |v: &[f64]| -> Result<Vec<f64>> {
        let mut f = policy.fvp_sum(fvp_batch, v)?;
        f.iter_mut().zip(v).for_each(|(fi, vi)| *fi = *fi / m + cfg.cg_damping * vi);
        Ok(f)
    };
    let x = conjugate_gradient(avp, &g, cfg.cg_iters, 1e-10)?;
    let shs = dot(&x, &avp(&x)?);
    if !(shs.is_finite() && shs > 0.0) {
        return Ok(TrpoDiagnostics::default());
    }
    let scale = (2.0 * cfg.max_kl / shs).sqrt();
    let old_params = policy.params();
    let old_lp = policy.log_probs(batch)?;
    let old_dist = policy.dist(batch)?;
    let surr_old: f64 = advantages.iter().sum::<f64>() / n as f64;
    let mut frac = 1.0;
    let mut candidate = old_params.clone();
    for k in 0..cfg.max_backtracks.max(1) {
        for (c, (o, xi)) in candidate.iter_mut().zip(old_params.iter().zip(&x)) {
            *c = o + frac * scale * xi;
        }
        policy.set_params(&candidate)?;
        let lp = policy.log_probs(batch)?;
        let surr = lp
            .iter()
            .zip(&old_lp)
            .zip(advantages)
            .map(|((l, lo), a)| (l - lo).exp() * a)
            .sum::<f64>()
            / n as f64;
        let kl = policy.kl_sum(&old_dist, batch)? / n as f64;
        if !(surr.is_finite() && kl.is_finite()) {
            return Err(Error::NonFinite(format!("trpo line search: surrogate {surr}, kl {kl}")));
        }
        let improvement = surr - surr_old;
        if kl <= 1.5 * cfg.max_kl && improvement >= 0.0 {
            return Ok(TrpoDiagnostics {
                accepted: true,
                surrogate_improvement: improvement,
                kl,
                backtracks: k,
            });
        }
        frac *= cfg.backtrack_factor;
    }
    policy.set_params(&old_params)?;
    Ok(TrpoDiagnostics {
        accepted: false,
        backtracks: cfg.max_backtracks,
        ..TrpoDiagnostics::default()
    })
}

/// Deterministic engine policy: the mean of a Gaussian policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineNet {
    pub policy: GaussianPolicy,
}

impl EngineNet {
    pub fn actions(&self, profiles: &[CustomerProfile]) -> Vec<EngineAction> {
        let obs = encode_profiles(profiles);
        let mu = self.policy.means(&obs, profiles.len()).expect("finite policy");
        mu.chunks_exact(self.policy.action_dim()).map(|m| EngineAction(m.to_vec())).collect()
    }
}

impl EnginePolicy for EngineNet {
    fn act(&self, profile: &CustomerProfile, _rng: &mut SimRng) -> EngineAction {
        self.actions(std::slice::from_ref(profile)).pop().unwrap()
    }

    fn act_batch(&self, profiles: &[CustomerProfile], _rngs: &mut [SimRng]) -> Vec<EngineAction> {
        self.actions(profiles)
    }
}

/// Exploring engine policy sampling from the Gaussian.
pub struct Exploring<'a>(pub &'a GaussianPolicy);

impl EnginePolicy for Exploring<'_> {
    fn act(&self, profile: &CustomerProfile, rng: &mut SimRng) -> EngineAction {
        self.act_batch(std::slice::from_ref(profile), std::slice::from_mut(rng)).pop().unwrap()
    }

    fn act_batch(&self, profiles: &[CustomerProfile], rngs: &mut [SimRng]) -> Vec<EngineAction> {
        let obs = encode_profiles(profiles);
        let a = self.0.sample(&obs, rngs).expect("finite policy");
        a.chunks_exact(self.0.action_dim()).map(|x| EngineAction(x.to_vec())).collect()
    }
}

pub fn encode_profiles(profiles: &[CustomerProfile]) -> Vec<f64> {
    let mut obs = Vec::with_capacity(profiles.len() * (profiles.first().map_or(0, |p| 13 + p.request.len())));
    for p in profiles {
        p.encode_into(&mut obs);
    }
    obs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub iter: usize,
    pub mean_return: f64,
    pub r2p_virtual: f64,
    pub kl: f64,
    pub mean_action_norm: f64,
}

pub fn learning_curve_csv(curve: &[LearningPoint]) -> String {
    let mut s = String::from("iter,mean_return,r2p_virtual,kl,mean_action_norm\n");
    for p in curve {
        s.push_str(&format!("{},{},{},{},{}\n", p.iter, p.mean_return, p.r2p_virtual, p.kl, p.mean_action_norm));
    }
    s
}

/// Engine rewards of logged sessions: 1 when the session ends in a purchase.
fn session_rewards(sessions: &[Session], anc: Option<&AncConfig>) -> Vec<f64> {
    sessions
        .iter()
        .map(|s| {
            let r = s.purchased() as u8 as f64;
            match anc {
                Some(cfg) => anc_shape(r, &s.steps[0].action, cfg),
                None => r,
            }
        })
        .collect()
}

/// Train an engine policy inside an environment.
///
/// Each engine step is one customer session: the action is chosen when the
/// customer arrives and held while pages turn, so every episode has length
/// one and the advantage reduces to `r − V(s)`.
pub fn train_engine_policy(
    env: &VirtualEnvironment,
    cfg: &TrpoConfig,
    anc: Option<&AncConfig>,
    seed: u64,
    threads: usize,
) -> Result<(EngineNet, Vec<LearningPoint>)> {
    cfg.validate()?;
    let dims = env.dims;
    let mut init = stream(seed, Domain::Init, 1);
    let mut policy = GaussianPolicy::new(dims.profile_dim(), dims.action_dim, &cfg.net, cfg.init_std, &mut init)?;
    let mut value = ValueNet::new(dims.profile_dim(), &cfg.net, &mut init)?;
    let mut vopt = Optimizer::adam(cfg.value_lr);
    let mut train_rng = stream(seed, Domain::Training, 1);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let sessions = rollout_sessions(
            &Exploring(&policy),
            &*env.customer,
            &*env.sampler,
            cfg.batch_size,
            derive_seed(seed, Domain::Trajectory, iter as u64),
            dims,
            threads,
        );
        let rewards = session_rewards(&sessions, anc);
        let profiles: Vec<CustomerProfile> = sessions.iter().map(|s| s.profile.clone()).collect();
        let obs = encode_profiles(&profiles);
        let actions: Vec<f64> = sessions.iter().flat_map(|s| s.steps[0].action.0.iter().copied()).collect();
        let values = value.predict(&obs, sessions.len())?;
        let mut adv = Vec::with_capacity(sessions.len());
        let mut targets = Vec::with_capacity(sessions.len());
        for (r, v) in rewards.iter().zip(&values) {
            let (a, t) = gae(&[*r], &[*v], 0.0, cfg.gamma, cfg.lambda);
            adv.push(a[0]);
            targets.push(t[0]);
        }
        standardize(&mut adv);
        let batch = GaussianBatch {
            obs,
            actions,
            rows: sessions.len(),
        };
        let diag = trpo_step(&mut policy, &batch, &adv, cfg)?;
        value.fit(&batch.obs, &targets, cfg.value_epochs, cfg.value_lr, &mut vopt, &mut train_rng)?;
        let pages: usize = sessions.iter().map(|s| s.steps.len()).sum();
        let buys = sessions.iter().filter(|s| s.purchased()).count();
        let mean_return = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let mean_norm = sessions.iter().map(|s| s.steps[0].action.norm()).sum::<f64>() / sessions.len() as f64;
        if !mean_return.is_finite() || policy.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                stage: "engine policy",
                iteration: iter,
                detail: "non-finite policy".into(),
            });
        }
        curve.push(LearningPoint {
            iter,
            mean_return,
            r2p_virtual: buys as f64 / pages as f64,
            kl: diag.kl,
            mean_action_norm: mean_norm,
        });
    }
    Ok((EngineNet { policy }, curve))
}

/// Mean norm of the deterministic actions over a set of profiles.
pub fn mean_action_norm(engine: &EngineNet, profiles: &[CustomerProfile]) -> f64 {
    let a = engine.actions(profiles);
    a.iter().map(|x| l2_norm(&x.0)).sum::<f64>() / a.len().max(1) as f64
}
