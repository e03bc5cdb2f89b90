//! Adversarial imitation of customer behavior.
//!
//! A joint policy (engine head `σ`, customer head `κ`) generates customer
//! trajectories in the customer-view MDP; a discriminator learns to tell
//! generated state-action pairs from logged ones and its output becomes the
//! imitation reward for a trust-region update of both heads together.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gansd::{discriminator_loss_grad, PROB_FLOOR};
use crate::market::{
    sample_choice, CustomerAction, CustomerPolicy, CustomerProfile, CustomerSampler, CustomerState, Dataset,
    EngineAction, MarketDims, PageIndex,
};
use crate::nn::{clamped_ln, ModelCheckpoint, Mlp, NetConfig, Optimizer, Output};
use crate::policy::{
    encode_profiles, gae, standardize, trpo_step, CategoricalBatch, CategoricalPolicy, GaussianBatch, GaussianPolicy,
    TrpoConfig, TrpoPolicy, ValueNet,
};
use crate::rng::{derive_seed, stream, Domain, SimRng};

/// Customer sampler plus customer policy: the engine-view marketplace.
pub struct VirtualEnvironment {
    pub sampler: Box<dyn CustomerSampler + Send>,
    pub customer: Box<dyn CustomerPolicy + Send>,
    pub dims: MarketDims,
}

/// Outcome of one engine step.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineStep {
    pub reward: f64,
    pub pages: u32,
    pub next: CustomerProfile,
}

pub fn build_virtual_env<S, C>(sampler: S, customer: C, dims: MarketDims) -> VirtualEnvironment
where
    S: CustomerSampler + Send + 'static,
    C: CustomerPolicy + Send + 'static,
{
    VirtualEnvironment {
        sampler: Box::new(sampler),
        customer: Box::new(customer),
        dims,
    }
}

impl VirtualEnvironment {
    pub fn reset(&self, rng: &mut SimRng) -> CustomerProfile {
        self.sampler.sample(rng)
    }

    /// Show `action` to `profile` and let the customer act until the engine
    /// sees a new customer: a purchase earns 1, leaving or paging past the
    /// last page earns 0.
    pub fn step(&self, profile: &CustomerProfile, action: &EngineAction, rng: &mut SimRng) -> EngineStep {
        let mut page = 0;
        loop {
            let state = CustomerState {
                profile: profile.clone(),
                action: action.clone(),
                page: PageIndex(page),
            };
            let choice = sample_choice(&self.customer.probs(&state), rng);
            let done = match choice {
                CustomerAction::Buy => Some(1.0),
                CustomerAction::Leave => Some(0.0),
                CustomerAction::TurnPage if page >= self.dims.max_index => Some(0.0),
                CustomerAction::TurnPage => None,
            };
            page += 1;
            if let Some(reward) = done {
                return EngineStep {
                    reward,
                    pages: page,
                    next: self.sampler.sample(rng),
                };
            }
        }
    }
}

/// A customer policy backed by a softmax network over encoded states.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomerNet {
    pub policy: CategoricalPolicy,
    pub max_index: u32,
}

impl CustomerNet {
    pub fn encode(&self, states: &[CustomerState]) -> Vec<f64> {
        let mut obs = Vec::with_capacity(states.len() * self.policy.net.input_dim());
        for s in states {
            s.encode_into(&mut obs, self.max_index);
        }
        obs
    }
}

impl CustomerPolicy for CustomerNet {
    fn probs(&self, state: &CustomerState) -> [f64; 3] {
        self.probs_batch(std::slice::from_ref(state))[0]
    }

    fn probs_batch(&self, states: &[CustomerState]) -> Vec<[f64; 3]> {
        if states.is_empty() {
            return Vec::new();
        }
        let p = self.policy.probs(&self.encode(states), states.len()).expect("finite customer network");
        p.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }
}

/// Discriminator input: encoded customer state followed by a one-hot action.
pub fn encode_pair(state: &CustomerState, action: CustomerAction, max_index: u32, out: &mut Vec<f64>) {
    state.encode_into(out, max_index);
    let start = out.len();
    out.resize(start + 3, 0.0);
    out[start + action.index()] = 1.0;
}

/// `D(s, a)` estimates the probability that a pair was generated.
#[derive(Debug, Clone, PartialEq)]
pub struct MailDiscriminator {
    pub net: Mlp,
    pub max_index: u32,
}

impl MailDiscriminator {
    pub fn new(dims: MarketDims, net: &NetConfig, rng: &mut SimRng) -> Result<Self> {
        Ok(MailDiscriminator {
            net: net.build(dims.state_dim() + 3, 1, Output::Sigmoid, rng)?,
            max_index: dims.max_index,
        })
    }

    pub fn scores(&self, encoded_pairs: &[f64]) -> Result<Vec<f64>> {
        let rows = encoded_pairs.len() / self.net.input_dim();
        self.net.forward_rows(encoded_pairs, rows)
    }
}

/// `−ln D(s, a)`, with `D` clamped away from 0 and 1.
pub fn imitation_reward(disc: &MailDiscriminator, state: &CustomerState, action: CustomerAction) -> Result<f64> {
    let mut x = Vec::new();
    encode_pair(state, action, disc.max_index, &mut x);
    Ok(-clamped_ln(disc.scores(&x)?[0], PROB_FLOOR))
}

/// The negated objective `E_gen[ln D] + E_expert[ln(1 − D)]`.
pub fn mail_discriminator_loss(disc: &MailDiscriminator, generated: &[f64], expert: &[f64]) -> Result<f64> {
    crate::gansd::gansd_discriminator_loss(generated, expert, &disc.net)
}

/// One ascent step on the discriminator objective; returns the loss before it.
pub fn mail_discriminator_update(
    disc: &mut MailDiscriminator,
    generated: &[f64],
    expert: &[f64],
    opt: &mut Optimizer,
) -> Result<f64> {
    let (loss, g) = discriminator_loss_grad(generated, expert, &disc.net)?;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            stage: "mail discriminator",
            iteration: opt.steps() as usize,
            detail: format!("loss {loss}"),
        });
    }
    opt.step(disc.net.params_mut(), &g)?;
    Ok(loss)
}

/// Engine head and customer head trained as one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    pub engine: GaussianPolicy,
    pub customer: CategoricalPolicy,
    pub dims: MarketDims,
}

impl JointPolicy {
    pub fn new(dims: MarketDims, net: &NetConfig, init_std: f64, rng: &mut SimRng) -> Result<Self> {
        Ok(JointPolicy {
            engine: GaussianPolicy::new(dims.profile_dim(), dims.action_dim, net, init_std, rng)?,
            customer: CategoricalPolicy::new(dims.state_dim(), 3, net, rng)?,
            dims,
        })
    }

    /// Fresh engine head paired with an already fitted customer network.
    pub fn with_customer(dims: MarketDims, net: &NetConfig, init_std: f64, customer: CategoricalPolicy, rng: &mut SimRng) -> Result<Self> {
        let want = net.sizes(dims.state_dim(), 3);
        if customer.net.sizes() != want.as_slice() {
            return Err(Error::invalid(format!(
                "mail: customer network has layers {:?}, expected {:?}",
                customer.net.sizes(),
                want
            )));
        }
        Ok(JointPolicy {
            engine: GaussianPolicy::new(dims.profile_dim(), dims.action_dim, net, init_std, rng)?,
            customer,
            dims,
        })
    }

    pub fn customer_net(&self) -> CustomerNet {
        CustomerNet {
            policy: self.customer.clone(),
            max_index: self.dims.max_index,
        }
    }

    /// Customer-action distribution of the composed policy at `(s, n)` when
    /// the engine plays its mean action.
    pub fn joint_probs(&self, profile: &CustomerProfile, page: u32) -> Result<[f64; 3]> {
        let obs = encode_profiles(std::slice::from_ref(profile));
        let a = self.engine.means(&obs, 1)?;
        let state = CustomerState {
            profile: profile.clone(),
            action: EngineAction(a),
            page: PageIndex(page),
        };
        Ok(self.customer_net().probs(&state))
    }

    pub fn to_checkpoint(&self) -> Result<ModelCheckpoint> {
        let mut ck = ModelCheckpoint::new();
        self.engine.insert_into(&mut ck, "engine")?;
        ck.insert_mlp("customer", &self.customer.net);
        Ok(ck)
    }

    pub fn load_checkpoint(&mut self, ck: &ModelCheckpoint) -> Result<()> {
        self.engine.load_from(ck, "engine")?;
        ck.load_mlp("customer", &mut self.customer.net)
    }
}

/// Customer steps with the engine decisions made at customer arrivals.
#[derive(Debug, Clone, Default)]
pub struct JointBatch {
    pub customer: CategoricalBatch,
    pub engine: GaussianBatch,
    /// Customer row at which each engine decision was taken.
    pub arrivals: Vec<usize>,
}

impl TrpoPolicy for JointPolicy {
    type Batch = JointBatch;

    fn batch_len(batch: &JointBatch) -> usize {
        batch.customer.actions.len()
    }

    fn select(batch: &JointBatch, rows: &[usize]) -> JointBatch {
        let mut pos = vec![usize::MAX; Self::batch_len(batch)];
        rows.iter().enumerate().for_each(|(i, &r)| pos[r] = i);
        let mut engine_rows = Vec::new();
        let mut arrivals = Vec::new();
        for (k, &r) in batch.arrivals.iter().enumerate() {
            if pos[r] != usize::MAX {
                engine_rows.push(k);
                arrivals.push(pos[r]);
            }
        }
        JointBatch {
            customer: CategoricalPolicy::select(&batch.customer, rows),
            engine: GaussianPolicy::select(&batch.engine, &engine_rows),
            arrivals,
        }
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.customer.params();
        p.extend(self.engine.params());
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let n = self.customer.net.num_params();
        if params.len() < n {
            return Err(Error::invalid("joint policy parameter vector too short"));
        }
        self.customer.set_params(&params[..n])?;
        self.engine.set_params(&params[n..])
    }

    fn log_probs(&self, b: &JointBatch) -> Result<Vec<f64>> {
        let mut lp = self.customer.log_probs(&b.customer)?;
        if b.engine.rows > 0 {
            for (k, l) in self.engine.log_probs(&b.engine)?.into_iter().enumerate() {
                lp[b.arrivals[k]] += l;
            }
        }
        Ok(lp)
    }

    fn logprob_grad(&self, b: &JointBatch, w: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.customer.logprob_grad(&b.customer, w)?;
        if b.engine.rows > 0 {
            let we: Vec<f64> = b.arrivals.iter().map(|&r| w[r]).collect();
            g.extend(self.engine.logprob_grad(&b.engine, &we)?);
        } else {
            g.extend(std::iter::repeat_n(0.0, self.engine.params().len()));
        }
        Ok(g)
    }

    fn dist(&self, b: &JointBatch) -> Result<Vec<f64>> {
        let mut d = self.customer.dist(&b.customer)?;
        if b.engine.rows > 0 {
            d.extend(self.engine.dist(&b.engine)?);
        }
        Ok(d)
    }

    fn kl_sum(&self, old: &[f64], b: &JointBatch) -> Result<f64> {
        let nc = Self::batch_len(b) * self.customer.num_actions();
        let mut kl = self.customer.kl_sum(&old[..nc], &b.customer)?;
        if b.engine.rows > 0 {
            kl += self.engine.kl_sum(&old[nc..], &b.engine)?;
        }
        Ok(kl)
    }

    fn fvp_sum(&self, b: &JointBatch, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.customer.net.num_params();
        let mut out = self.customer.fvp_sum(&b.customer, &v[..n])?;
        if b.engine.rows > 0 {
            out.extend(self.engine.fvp_sum(&b.engine, &v[n..])?);
        } else {
            out.extend(std::iter::repeat_n(0.0, v.len() - n));
        }
        Ok(out)
    }
}

/// One generated customer-view step.
#[derive(Debug, Clone, PartialEq)]
pub struct MailStep {
    pub state: CustomerState,
    pub choice: CustomerAction,
    /// The engine chose `state.action` at this step.
    pub arrival: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<MailStep>,
    /// Ended by the step cap rather than a terminal event.
    pub truncated: bool,
}

/// Generate `count` trajectories in the customer-view MDP.
///
/// A trajectory ends on a purchase or on paging past the last page; leaving
/// hands over to a fresh customer and engine decision. `cap` truncates.
pub fn mail_rollout<S: CustomerSampler + ?Sized>(
    joint: &JointPolicy,
    sampler: &S,
    count: usize,
    cap: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let dims = joint.dims;
    let customer = joint.customer_net();
    let mut rngs: Vec<SimRng> = (0..count).map(|i| stream(seed, Domain::Trajectory, i as u64)).collect();
    let mut trajs = vec![Trajectory::default(); count];
    let engine_act = |profiles: &[CustomerProfile], rngs: &mut [SimRng]| -> Result<Vec<EngineAction>> {
        let a = joint.engine.sample(&encode_profiles(profiles), rngs)?;
        Ok(a.chunks_exact(dims.action_dim).map(|x| EngineAction(x.to_vec())).collect())
    };
    let profiles = sampler.sample_batch(&mut rngs);
    let actions = engine_act(&profiles, &mut rngs)?;
    let mut current: Vec<(CustomerState, bool)> = profiles
        .into_iter()
        .zip(actions)
        .map(|(profile, action)| {
            (
                CustomerState {
                    profile,
                    action,
                    page: PageIndex(0),
                },
                true,
            )
        })
        .collect();
    let mut active: Vec<usize> = (0..count).collect();
    while !active.is_empty() {
        let states: Vec<CustomerState> = active.iter().map(|&k| current[k].0.clone()).collect();
        let probs = customer.probs_batch(&states);
        let mut still = Vec::with_capacity(active.len());
        let mut leavers = Vec::new();
        for (&k, p) in active.iter().zip(&probs) {
            let choice = sample_choice(p, &mut rngs[k]);
            let (state, arrival) = current[k].clone();
            trajs[k].steps.push(MailStep {
                state: state.clone(),
                choice,
                arrival,
            });
            let ended = match choice {
                CustomerAction::Buy => true,
                CustomerAction::TurnPage => state.page.0 >= dims.max_index,
                CustomerAction::Leave => false,
            };
            if ended {
                continue;
            }
            if trajs[k].steps.len() >= cap {
                trajs[k].truncated = true;
                continue;
            }
            if choice == CustomerAction::TurnPage {
                current[k] = (
                    CustomerState {
                        page: PageIndex(state.page.0 + 1),
                        ..state
                    },
                    false,
                );
            } else {
                leavers.push(k);
            }
            still.push(k);
        }
        if !leavers.is_empty() {
            let mut lr: Vec<SimRng> = leavers.iter().map(|&k| rngs[k].clone()).collect();
            let profiles = sampler.sample_batch(&mut lr);
            let actions = engine_act(&profiles, &mut lr)?;
            for (((&k, r), profile), action) in leavers.iter().zip(lr).zip(profiles).zip(actions) {
                rngs[k] = r;
                current[k] = (
                    CustomerState {
                        profile,
                        action,
                        page: PageIndex(0),
                    },
                    true,
                );
            }
        }
        active = still;
    }
    Ok(trajs)
}

/// Logged `(state, customer action)` pairs, encoded for the discriminator.
pub fn expert_pairs(expert: &Dataset, max_index: u32) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(expert.num_records());
    for s in &expert.sessions {
        for (i, st) in s.steps.iter().enumerate() {
            let mut x = Vec::new();
            encode_pair(&s.state(i), st.choice, max_index, &mut x);
            out.push(x);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MailConfig {
    /// Trajectories generated per iteration.
    pub trajectories: usize,
    pub iterations: usize,
    pub step_cap: usize,
    /// Discriminator steps per iteration.
    pub disc_steps: usize,
    pub disc_lr: f64,
    /// Subtract the batch-mean imitation reward before advantage estimation,
    /// so ending a trajectory early is neither rewarded nor punished on average.
    pub center_reward: bool,
    /// Discount of the customer-view MDP.
    pub gamma: f64,
    pub value_epochs: usize,
    pub init_std: f64,
    /// Trust-region size of the joint policy update; replaces the engine
    /// TRPO setting during imitation.
    pub max_kl: f64,
    /// Start the customer head from the behavior-cloned customer.
    pub warm_start: bool,
    pub net: NetConfig,
}

impl Default for MailConfig {
    fn default() -> Self {
        MailConfig {
            trajectories: 128,
            iterations: 100,
            step_cap: 200,
            disc_steps: 20,
            disc_lr: 1e-3,
            center_reward: true,
            gamma: 0.99,
            value_epochs: 3,
            init_std: 0.3,
            max_kl: 0.002,
            warm_start: true,
            net: NetConfig::default(),
        }
    }
}

impl MailConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.step_cap == 0 {
            return Err(Error::invalid("mail: trajectories and step_cap must be positive"));
        }
        if !(self.disc_lr > 0.0 && self.init_std > 0.0 && self.max_kl > 0.0) {
            return Err(Error::invalid("mail: disc_lr and init_std must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MailCurvePoint {
    pub iter: usize,
    pub disc_loss: f64,
    pub mean_imitation_reward: f64,
    pub policy_kl: f64,
}

pub fn mail_curve_csv(curve: &[MailCurvePoint]) -> String {
    let mut s = String::from("iter,disc_loss,mean_imitation_reward,policy_kl\n");
    for p in curve {
        s.push_str(&format!("{},{},{},{}\n", p.iter, p.disc_loss, p.mean_imitation_reward, p.policy_kl));
    }
    s
}

/// Starting policies for `train_mail`: a fresh engine head over the cloned
/// customer when `cfg.warm_start` is set, otherwise `None`.
pub fn warm_start(dims: MarketDims, cfg: &MailConfig, customer: &CustomerNet, seed: u64) -> Result<Option<JointPolicy>> {
    if !cfg.warm_start {
        return Ok(None);
    }
    let mut rng = stream(seed, Domain::Init, 3);
    JointPolicy::with_customer(dims, &cfg.net, cfg.init_std, customer.policy.clone(), &mut rng).map(Some)
}

/// Result of adversarial imitation.
#[derive(Debug, Clone)]
pub struct MailModel {
    pub joint: JointPolicy,
    pub discriminator: MailDiscriminator,
    pub curve: Vec<MailCurvePoint>,
}

impl MailModel {
    pub fn customer(&self) -> CustomerNet {
        self.joint.customer_net()
    }
}

/// Adversarially imitate the logged customers.
///
/// `init` optionally provides starting policies (otherwise fresh networks).
pub fn train_mail<S: CustomerSampler + ?Sized>(
    expert: &Dataset,
    sampler: &S,
    dims: MarketDims,
    cfg: &MailConfig,
    trpo: &TrpoConfig,
    init: Option<JointPolicy>,
    seed: u64,
) -> Result<MailModel> {
    cfg.validate()?;
    let trpo = &TrpoConfig { max_kl: cfg.max_kl, ..trpo.clone() };
    trpo.validate()?;
    let pairs = expert_pairs(expert, dims.max_index);
    if pairs.is_empty() {
        return Err(Error::invalid("mail: expert dataset is empty"));
    }
    let mut init_rng = stream(seed, Domain::Init, 2);
    let mut joint = match init {
        Some(j) => j,
        None => JointPolicy::new(dims, &cfg.net, cfg.init_std, &mut init_rng)?,
    };
    let mut disc = MailDiscriminator::new(dims, &cfg.net, &mut init_rng)?;
    let mut value = ValueNet::new(dims.state_dim(), &cfg.net, &mut init_rng)?;
    let mut dopt = Optimizer::adam(cfg.disc_lr);
    let mut vopt = Optimizer::adam(trpo.value_lr);
    let mut rng = stream(seed, Domain::Training, 2);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let trajs = mail_rollout(
            &joint,
            sampler,
            cfg.trajectories,
            cfg.step_cap,
            derive_seed(seed, Domain::Trajectory, iter as u64),
        )?;
        let mut gen = Vec::new();
        let mut batch = JointBatch::default();
        for t in &trajs {
            for st in &t.steps {
                if st.arrival {
                    batch.arrivals.push(batch.customer.actions.len());
                    st.state.profile.encode_into(&mut batch.engine.obs);
                    batch.engine.actions.extend_from_slice(&st.state.action.0);
                    batch.engine.rows += 1;
                }
                st.state.encode_into(&mut batch.customer.obs, dims.max_index);
                batch.customer.actions.push(st.choice.index());
                encode_pair(&st.state, st.choice, dims.max_index, &mut gen);
            }
        }
        let rows = batch.customer.actions.len();
        let width = dims.state_dim() + 3;
        let mut disc_loss = 0.0;
        for _ in 0..cfg.disc_steps {
            let ex: Vec<f64> = (0..rows).flat_map(|_| pairs.choose(&mut rng).unwrap().iter().copied()).collect();
            disc_loss = mail_discriminator_update(&mut disc, &gen, &ex, &mut dopt)?;
        }
        let scores = disc.scores(&gen)?;
        debug_assert_eq!(scores.len() * width, gen.len());
        let mut rewards: Vec<f64> = scores.iter().map(|&d| -clamped_ln(d, PROB_FLOOR)).collect();
        let mean_reward = rewards.iter().sum::<f64>() / rows as f64;
        if cfg.center_reward {
            rewards.iter_mut().for_each(|r| *r -= mean_reward);
        }
        let values = value.predict(&batch.customer.obs, rows)?;
        let mut adv = Vec::with_capacity(rows);
        let mut targets = Vec::with_capacity(rows);
        let mut start = 0;
        for t in &trajs {
            let n = t.steps.len();
            let v = &values[start..start + n];
            let boot = if t.truncated { v[n - 1] } else { 0.0 };
            let (a, r) = gae(&rewards[start..start + n], v, boot, cfg.gamma, trpo.lambda);
            adv.extend(a);
            targets.extend(r);
            start += n;
        }
        standardize(&mut adv);
        let diag = trpo_step(&mut joint, &batch, &adv, trpo)?;
        value.fit(&batch.customer.obs, &targets, cfg.value_epochs, trpo.value_lr, &mut vopt, &mut rng)?;
        if !(disc_loss.is_finite() && mean_reward.is_finite()) {
            return Err(Error::Diverged {
                stage: "mail",
                iteration: iter,
                detail: format!("disc_loss {disc_loss}, reward {mean_reward}"),
            });
        }
        curve.push(MailCurvePoint {
            iter,
            disc_loss,
            mean_imitation_reward: mean_reward,
            policy_kl: diag.kl,
        });
    }
    Ok(MailModel {
        joint,
        discriminator: disc,
        curve,
    })
}

/// Fraction of pairs the discriminator labels correctly at threshold 0.5.
pub fn discriminator_accuracy(disc: &MailDiscriminator, generated: &[f64], expert: &[f64]) -> Result<f64> {
    let g = disc.scores(generated)?;
    let e = disc.scores(expert)?;
    let correct = g.iter().filter(|&&d| d > 0.5).count() + e.iter().filter(|&&d| d <= 0.5).count();
    Ok(correct as f64 / (g.len() + e.len()) as f64)
}
