//! Supervised comparison methods: a behavior-cloned customer model and two
//! regression engine policies fitted directly on the logs.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mail::CustomerNet;
use crate::market::{Dataset, MarketDims};
use crate::nn::{clip_grad_norm, NetConfig, Optimizer};
use crate::policy::{CategoricalPolicy, EngineNet, GaussianPolicy};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub net: NetConfig,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 30,
            batch: 256,
            lr: 1e-3,
            net: NetConfig::default(),
        }
    }
}

/// Mean cross-entropy of a customer network and its gradient.
pub fn bc_loss_grad(policy: &CategoricalPolicy, obs: &[f64], actions: &[usize]) -> Result<(f64, Vec<f64>)> {
    let rows = actions.len();
    let trace = policy.net.trace(obs, rows)?;
    let mut loss = 0.0;
    let mut g = trace.output.clone();
    for (r, &a) in actions.iter().enumerate() {
        loss -= trace.output[r * 3 + a].max(1e-300).ln() / rows as f64;
        g[r * 3 + a] -= 1.0;
    }
    g.iter_mut().for_each(|x| *x /= rows as f64);
    Ok((loss, policy.net.backward_logits(&trace, &g, false)?.params))
}

/// Encoded customer states and actions of every logged record.
pub fn customer_pairs(data: &Dataset, max_index: u32) -> (Vec<f64>, Vec<usize>) {
    let mut obs = Vec::new();
    let mut actions = Vec::new();
    for s in &data.sessions {
        for (i, st) in s.steps.iter().enumerate() {
            s.state(i).encode_into(&mut obs, max_index);
            actions.push(st.choice.index());
        }
    }
    (obs, actions)
}

fn gather(obs: &[f64], width: usize, rows: &[usize]) -> Vec<f64> {
    rows.iter().flat_map(|&r| obs[r * width..(r + 1) * width].iter().copied()).collect()
}

/// Maximum-likelihood customer model over logged state-action pairs.
pub fn train_bc(expert: &Dataset, dims: MarketDims, cfg: &BcConfig, seed: u64) -> Result<CustomerNet> {
    let (obs, actions) = customer_pairs(expert, dims.max_index);
    if actions.is_empty() {
        return Err(Error::invalid("bc: dataset has no records"));
    }
    let mut rng = stream(seed, Domain::Init, 3);
    let mut policy = CategoricalPolicy::new(dims.state_dim(), 3, &cfg.net, &mut rng)?;
    let mut opt = Optimizer::adam(cfg.lr);
    let width = dims.state_dim();
    let mut idx: Vec<usize> = (0..actions.len()).collect();
    let mut train = stream(seed, Domain::Training, 3);
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut train);
        for chunk in idx.chunks(cfg.batch.max(1)) {
            let o = gather(&obs, width, chunk);
            let a: Vec<usize> = chunk.iter().map(|&r| actions[r]).collect();
            let (loss, g) = bc_loss_grad(&policy, &o, &a)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "bc",
                    iteration: epoch,
                    detail: format!("loss {loss}"),
                });
            }
            opt.step(policy.net.params_mut(), &g)?;
        }
    }
    Ok(CustomerNet {
        policy,
        max_index: dims.max_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlVariant {
    Sl1,
    Sl2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Passes over the purchase records.
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
    pub net: NetConfig,
}

impl Default for SlConfig {
    fn default() -> Self {
        SlConfig {
            lambda1: 0.3,
            lambda2: 0.001,
            epochs: 100,
            batch: 256,
            lr: 1e-3,
            clip: 10.0,
            net: NetConfig::default(),
        }
    }
}

/// One row per logged session: the shown action and per-session record
/// weights. A session holds one action over all its pages, so its records
/// collapse into a purchase weight and a non-purchase weight.
#[derive(Debug, Clone)]
pub struct SlRows {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    /// Weight on `|π(s) − a|²`.
    pub fit_weight: Vec<f64>,
    /// Weight on `|π(s)|²`.
    pub norm_weight: Vec<f64>,
}

impl SlRows {
    pub fn len(&self) -> usize {
        self.fit_weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fit_weight.is_empty()
    }
}

/// Build the regression rows for an objective; the loss is
/// `Σ_rows fit·|π(s) − a|² + norm·|π(s)|²`.
pub fn sl_rows(data: &Dataset, variant: SlVariant, lambda1: f64, lambda2: f64) -> Result<SlRows> {
    let records = data.num_records() as f64;
    let purchases = data.sessions.iter().filter(|s| s.purchased()).count() as f64;
    if purchases == 0.0 {
        return Err(Error::invalid(
            "supervised engine policies need at least one purchase record to regress on",
        ));
    }
    let others = records - purchases;
    let mut rows = SlRows {
        obs: Vec::new(),
        actions: Vec::new(),
        fit_weight: Vec::new(),
        norm_weight: Vec::new(),
    };
    for s in &data.sessions {
        let n1 = s.purchased() as u8 as f64;
        let n0 = s.steps.len() as f64 - n1;
        let (fit, norm) = match variant {
            SlVariant::Sl1 => (n1 / purchases, 0.0),
            SlVariant::Sl2 => {
                let away = if others > 0.0 { lambda1 * n0 / others } else { 0.0 };
                (n1 / purchases - away, lambda2 * (n0 + n1) / records)
            }
        };
        if fit == 0.0 && norm == 0.0 {
            continue;
        }
        s.profile.encode_into(&mut rows.obs);
        rows.actions.extend_from_slice(&s.steps[0].action.0);
        rows.fit_weight.push(fit);
        rows.norm_weight.push(norm);
    }
    Ok(rows)
}

/// Loss and gradient on a subset of rows, rescaled by `scale`.
pub fn sl_loss_grad(policy: &GaussianPolicy, rows: &SlRows, subset: &[usize], scale: f64) -> Result<(f64, Vec<f64>)> {
    let od = rows.obs.len() / rows.len();
    let d = policy.action_dim();
    let obs = gather(&rows.obs, od, subset);
    let trace = policy.mean.trace(&obs, subset.len())?;
    let mut loss = 0.0;
    let mut g = vec![0.0; subset.len() * d];
    for (k, &r) in subset.iter().enumerate() {
        let (f, n) = (rows.fit_weight[r] * scale, rows.norm_weight[r] * scale);
        for j in 0..d {
            let p = trace.output[k * d + j];
            let diff = p - rows.actions[r * d + j];
            loss += f * diff * diff + n * p * p;
            g[k * d + j] = 2.0 * (f * diff + n * p);
        }
    }
    Ok((loss, policy.mean.backward_logits(&trace, &g, false)?.params))
}

/// Fit SL1 (`lambda1 = lambda2 = 0` reduces SL2 to it) on logged sessions.
pub fn train_sl(data: &Dataset, dims: MarketDims, variant: SlVariant, cfg: &SlConfig, seed: u64) -> Result<EngineNet> {
    let rows = sl_rows(data, variant, cfg.lambda1, cfg.lambda2)?;
    let purchases = data.sessions.iter().filter(|s| s.purchased()).count();
    let mut init = stream(seed, Domain::Init, 4);
    let mut policy = GaussianPolicy::new(dims.profile_dim(), dims.action_dim, &cfg.net, 1.0, &mut init)?;
    let mut opt = Optimizer::adam(cfg.lr);
    let mut rng = stream(seed, Domain::Training, 4);
    let b = cfg.batch.max(1).min(rows.len());
    let steps_per_epoch = purchases.div_ceil(b);
    let scale = rows.len() as f64 / b as f64;
    for step in 0..cfg.epochs * steps_per_epoch {
        let subset: Vec<usize> = (0..b).map(|_| rng.random_range(0..rows.len())).collect();
        let (loss, mut g) = sl_loss_grad(&policy, &rows, &subset, scale)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: "supervised engine policy",
                iteration: step,
                detail: format!("loss {loss}"),
            });
        }
        clip_grad_norm(&mut g, cfg.clip);
        opt.step(policy.mean.params_mut(), &g)?;
    }
    Ok(EngineNet { policy })
}

pub fn train_sl1(data: &Dataset, dims: MarketDims, cfg: &SlConfig, seed: u64) -> Result<EngineNet> {
    train_sl(data, dims, SlVariant::Sl1, cfg, seed)
}

pub fn train_sl2(data: &Dataset, dims: MarketDims, cfg: &SlConfig, seed: u64) -> Result<EngineNet> {
    train_sl(data, dims, SlVariant::Sl2, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{
        CustomerAction, CustomerPolicy, CustomerProfile, CustomerState, DatasetMeta, EngineAction, EnginePolicy, PageIndex,
        Session, StepRecord,
    };
    use crate::nn::gradcheck::{central_difference, max_relative_error};

    fn dims() -> MarketDims {
        MarketDims {
            request_dim: 2,
            action_dim: 2,
            max_index: 3,
        }
    }

    fn profile(t: usize) -> CustomerProfile {
        CustomerProfile::from_type(t, vec![0.6, 0.8])
    }

    fn meta() -> DatasetMeta {
        DatasetMeta {
            logging_policy: "test".into(),
            time_slice: None,
            drift_level: 0.0,
            seed: 0,
        }
    }

    /// A session that shows `action` and ends with `last` after `turns` page turns.
    fn session(t: usize, action: &[f64], turns: u32, last: CustomerAction) -> Session {
        let step = |page, choice| StepRecord {
            action: EngineAction(action.to_vec()),
            page,
            choice,
            reward: (choice == CustomerAction::Buy) as u8,
            price: None,
        };
        let mut steps: Vec<StepRecord> = (0..turns).map(|p| step(p, CustomerAction::TurnPage)).collect();
        steps.push(step(turns, last));
        Session {
            profile: profile(t),
            steps,
        }
    }

    fn data(sessions: Vec<Session>) -> Dataset {
        Dataset { meta: meta(), sessions }
    }

    fn state(t: usize, page: u32) -> CustomerState {
        CustomerState {
            profile: profile(t),
            action: EngineAction(vec![0.1, 0.1]),
            page: PageIndex(page),
        }
    }

    fn quick_bc() -> BcConfig {
        BcConfig {
            epochs: 60,
            batch: 64,
            lr: 3e-3,
            net: NetConfig {
                hidden: vec![16],
                ..NetConfig::default()
            },
        }
    }

    #[test]
    fn bc_gradient_matches_differences() {
        let mut rng = stream(1, Domain::Init, 0);
        let p = CategoricalPolicy::new(4, 3, &NetConfig { hidden: vec![6, 5], ..NetConfig::default() }, &mut rng).unwrap();
        let obs: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let actions = vec![0, 2, 1, 1, 0];
        let (_, g) = bc_loss_grad(&p, &obs, &actions).unwrap();
        let fd = central_difference(
            |x| {
                let mut q = p.clone();
                q.net.set_params(x).unwrap();
                bc_loss_grad(&q, &obs, &actions).unwrap().0
            },
            p.net.params(),
            1e-5,
        );
        assert!(max_relative_error(&g, &fd) < 1e-4);
    }

    #[test]
    fn bc_recovers_a_deterministic_customer() {
        // type 0 always buys at once, type 47 turns to the last page and leaves
        let a = [0.1, 0.1];
        let mut s = Vec::new();
        for _ in 0..200 {
            s.push(session(0, &a, 0, CustomerAction::Buy));
            s.push(session(47, &a, 3, CustomerAction::Leave));
        }
        let d = data(s);
        let bc = train_bc(&d, dims(), &quick_bc(), 1).unwrap();
        let (mut hit, mut total) = (0, 0);
        for sess in &d.sessions {
            for (i, st) in sess.steps.iter().enumerate() {
                let p = bc.probs(&sess.state(i));
                let best = (0..3).max_by(|&x, &y| p[x].total_cmp(&p[y])).unwrap();
                hit += (best == st.choice.index()) as usize;
                total += 1;
            }
        }
        assert!(hit as f64 >= 0.99 * total as f64);
    }

    #[test]
    fn bc_matches_conditional_frequencies() {
        let a = [0.1, 0.1];
        let mut s = Vec::new();
        for i in 0..1000 {
            let last = if i % 10 < 7 { CustomerAction::Buy } else { CustomerAction::Leave };
            s.push(session(5, &a, 0, last));
            let last = if i % 10 < 3 { CustomerAction::Buy } else { CustomerAction::Leave };
            s.push(session(40, &a, 0, last));
        }
        let bc = train_bc(&data(s), dims(), &quick_bc(), 2).unwrap();
        let p = bc.probs(&state(5, 0));
        assert!((p[0] - 0.7).abs() < 0.05 && (p[2] - 0.3).abs() < 0.05, "{p:?}");
        let p = bc.probs(&state(40, 0));
        assert!((p[0] - 0.3).abs() < 0.05 && (p[2] - 0.7).abs() < 0.05, "{p:?}");
    }

    #[test]
    fn bc_on_identical_states_learns_global_frequencies() {
        let a = [0.1, 0.1];
        let mut s = Vec::new();
        for i in 0..1000 {
            let last = match i % 5 {
                0 => CustomerAction::Buy,
                1 | 2 => CustomerAction::TurnPage,
                _ => CustomerAction::Leave,
            };
            s.push(session(9, &a, 0, last));
        }
        let bc = train_bc(&data(s), dims(), &quick_bc(), 3).unwrap();
        let p = bc.probs(&state(9, 0));
        for (got, want) in p.iter().zip([0.2, 0.4, 0.4]) {
            assert!((got - want).abs() < 0.03, "{p:?}");
        }
    }

    #[test]
    fn bc_full_batch_loss_is_non_increasing() {
        let a = [0.1, 0.1];
        let s: Vec<Session> = (0..50).map(|i| session(i % 48, &a, (i % 4) as u32, CustomerAction::Leave)).collect();
        let (obs, actions) = customer_pairs(&data(s), 3);
        let mut rng = stream(4, Domain::Init, 0);
        let mut p = CategoricalPolicy::new(dims().state_dim(), 3, &NetConfig::default(), &mut rng).unwrap();
        let mut opt = Optimizer::sgd(1e-3);
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let (loss, g) = bc_loss_grad(&p, &obs, &actions).unwrap();
            assert!(loss <= last + 1e-12);
            last = loss;
            opt.step(p.net.params_mut(), &g).unwrap();
        }
    }

    #[test]
    fn bc_rejects_empty_data() {
        assert!(train_bc(&data(vec![]), dims(), &BcConfig::default(), 1).is_err());
    }

    fn quick_sl() -> SlConfig {
        SlConfig {
            epochs: 1500,
            batch: 32,
            lr: 3e-3,
            net: NetConfig {
                hidden: vec![16],
                ..NetConfig::default()
            },
            ..SlConfig::default()
        }
    }

    fn act(e: &EngineNet, t: usize) -> Vec<f64> {
        e.act(&profile(t), &mut stream(0, Domain::Evaluation, 0)).0
    }

    #[test]
    fn sl_requires_purchases() {
        let d = data(vec![session(1, &[0.1, 0.1], 0, CustomerAction::Leave)]);
        for v in [SlVariant::Sl1, SlVariant::Sl2] {
            let e = train_sl(&d, dims(), v, &quick_sl(), 1).unwrap_err();
            assert!(e.to_string().contains("purchase"));
        }
    }

    #[test]
    fn sl1_constant_target() {
        let s: Vec<Session> = (0..48).map(|t| session(t, &[0.4, -0.2], 0, CustomerAction::Buy)).collect();
        let e = train_sl1(&data(s), dims(), &quick_sl(), 1).unwrap();
        for t in [0, 17, 47] {
            let a = act(&e, t);
            assert!((a[0] - 0.4).abs() < 1e-3 && (a[1] + 0.2).abs() < 1e-3, "{a:?}");
        }
    }

    #[test]
    fn sl1_fits_two_states() {
        let mut s = Vec::new();
        for _ in 0..20 {
            s.push(session(2, &[0.5, 0.1], 0, CustomerAction::Buy));
            s.push(session(45, &[-0.3, 0.7], 1, CustomerAction::Buy));
        }
        let e = train_sl1(&data(s), dims(), &quick_sl(), 2).unwrap();
        let (a, b) = (act(&e, 2), act(&e, 45));
        assert!((a[0] - 0.5).abs() < 1e-2 && (a[1] - 0.1).abs() < 1e-2, "{a:?}");
        assert!((b[0] + 0.3).abs() < 1e-2 && (b[1] - 0.7).abs() < 1e-2, "{b:?}");
    }

    fn mixed(non_purchase_action: [f64; 2]) -> Dataset {
        let mut s = Vec::new();
        for t in 0..10 {
            s.push(session(t, &[0.2, 0.3], 1, CustomerAction::Buy));
            s.push(session(t, &non_purchase_action, 2, CustomerAction::Leave));
        }
        data(s)
    }

    #[test]
    fn sl1_ignores_non_purchase_records() {
        let cfg = SlConfig {
            epochs: 20,
            ..quick_sl()
        };
        let a = train_sl1(&mixed([0.9, 0.9]), dims(), &cfg, 3).unwrap();
        let b = train_sl1(&mixed([-0.9, 0.0]), dims(), &cfg, 3).unwrap();
        assert_eq!(a, b);
        let only: Vec<Session> = mixed([0.0, 0.0]).sessions.into_iter().filter(|s| s.purchased()).collect();
        let c = train_sl1(&data(only), dims(), &cfg, 3).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn sl2_with_zero_lambdas_is_sl1() {
        let d = mixed([0.9, 0.9]);
        let cfg = SlConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            epochs: 20,
            ..quick_sl()
        };
        let one = sl_rows(&d, SlVariant::Sl1, 0.0, 0.0).unwrap();
        let two = sl_rows(&d, SlVariant::Sl2, 0.0, 0.0).unwrap();
        assert_eq!((one.fit_weight, one.actions), (two.fit_weight, two.actions));
        assert_eq!(train_sl1(&d, dims(), &cfg, 4).unwrap(), train_sl2(&d, dims(), &cfg, 4).unwrap());
    }

    #[test]
    fn sl2_large_norm_penalty_shrinks_actions() {
        let cfg = SlConfig {
            lambda2: 1e4,
            ..quick_sl()
        };
        let e = train_sl2(&mixed([0.9, 0.9]), dims(), &cfg, 5).unwrap();
        for t in 0..10 {
            assert!(act(&e, t).iter().all(|x| x.abs() < 1e-2));
        }
    }

    #[test]
    fn sl_defaults() {
        let c = SlConfig::default();
        assert_eq!((c.lambda1, c.lambda2), (0.3, 0.001));
    }

    #[test]
    fn sl_gradient_matches_differences() {
        let mut rng = stream(6, Domain::Init, 0);
        let p = GaussianPolicy::new(dims().profile_dim(), 2, &NetConfig { hidden: vec![5], ..NetConfig::default() }, 1.0, &mut rng).unwrap();
        // perturb so the zeroed output layer does not hide errors
        let mut p = p;
        let x: Vec<f64> = p.mean.params().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        p.mean.set_params(&x).unwrap();
        let rows = sl_rows(&mixed([0.9, -0.4]), SlVariant::Sl2, 0.3, 0.1).unwrap();
        let subset = vec![0, 3, 5, 5];
        let (_, g) = sl_loss_grad(&p, &rows, &subset, 2.0).unwrap();
        let fd = central_difference(
            |x| {
                let mut q = p.clone();
                q.mean.set_params(x).unwrap();
                sl_loss_grad(&q, &rows, &subset, 2.0).unwrap().0
            },
            p.mean.params(),
            1e-5,
        );
        assert!(max_relative_error(&g, &fd) < 1e-4);
    }
}
