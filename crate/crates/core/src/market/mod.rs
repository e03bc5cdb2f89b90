//! Engine-view and customer-view decision processes of a search marketplace.
//!
//! The engine observes a [`CustomerProfile`] and emits an [`EngineAction`]
//! (a ranking-weight vector). The customer observes the triple
//! [`CustomerState`] = ⟨profile, engine action, page index⟩ and chooses a
//! [`CustomerAction`]. Engine reward is 1 on a purchase and 0 otherwise.

mod dataset;
mod metrics;
mod rollout;

pub use dataset::{Dataset, DatasetMeta, DATA_HEADER};
pub use metrics::{compute_metrics, feature_r2p, Metrics};
pub use rollout::{
    customer_transition, engine_transition, rollout_sessions, sample_choice, CustomerTransition, EngineTransition,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const NUM_CATEGORIES: usize = 8;
pub const NUM_POWER_LEVELS: usize = 3;
pub const NUM_LEVEL_FLAGS: usize = 2;
pub const NUM_TYPES: usize = NUM_CATEGORIES * NUM_POWER_LEVELS * NUM_LEVEL_FLAGS;
/// Sizes of the one-hot blocks of a profile encoding, in order.
pub const TYPE_BLOCKS: [usize; 3] = [NUM_CATEGORIES, NUM_POWER_LEVELS, NUM_LEVEL_FLAGS];
pub const TYPE_ONEHOT_DIM: usize = NUM_CATEGORIES + NUM_POWER_LEVELS + NUM_LEVEL_FLAGS;
/// Number of distinct values over the three categorical features.
pub const NUM_FEATURE_VALUES: usize = TYPE_ONEHOT_DIM;

/// Dimensions of the marketplace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketDims {
    pub request_dim: usize,
    pub action_dim: usize,
    pub max_index: u32,
}

impl Default for MarketDims {
    fn default() -> Self {
        MarketDims {
            request_dim: 4,
            action_dim: 8,
            max_index: 10,
        }
    }
}

impl MarketDims {
    /// One-hot type blocks followed by the request vector.
    pub fn profile_dim(&self) -> usize {
        TYPE_ONEHOT_DIM + self.request_dim
    }

    /// Profile encoding, engine action, then page / max_index.
    pub fn state_dim(&self) -> usize {
        self.profile_dim() + self.action_dim + 1
    }
}

/// A customer together with the search request it issues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerProfile {
    /// 1..=8
    pub query_category: u8,
    /// 1..=3
    pub purchase_power: u8,
    pub high_level: bool,
    /// Unit L2 norm.
    pub request: Vec<f64>,
}

impl CustomerProfile {
    pub fn new(query_category: u8, purchase_power: u8, high_level: bool, request: Vec<f64>) -> Result<Self> {
        let p = CustomerProfile {
            query_category,
            purchase_power,
            high_level,
            request,
        };
        p.validate()?;
        Ok(p)
    }

    /// Build from a type index in `0..NUM_TYPES`, normalizing `request`.
    pub fn from_type(type_index: usize, mut request: Vec<f64>) -> Self {
        assert!(type_index < NUM_TYPES);
        normalize(&mut request);
        CustomerProfile {
            query_category: (type_index / (NUM_POWER_LEVELS * NUM_LEVEL_FLAGS)) as u8 + 1,
            purchase_power: ((type_index / NUM_LEVEL_FLAGS) % NUM_POWER_LEVELS) as u8 + 1,
            high_level: type_index % NUM_LEVEL_FLAGS == 1,
            request,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=NUM_CATEGORIES as u8).contains(&self.query_category) {
            return Err(Error::invalid(format!("query_category {} outside 1..=8", self.query_category)));
        }
        if !(1..=NUM_POWER_LEVELS as u8).contains(&self.purchase_power) {
            return Err(Error::invalid(format!("purchase_power {} outside 1..=3", self.purchase_power)));
        }
        let n = l2_norm(&self.request);
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("request vector norm {n} is not 1")));
        }
        Ok(())
    }

    pub fn type_index(&self) -> usize {
        (self.query_category as usize - 1) * NUM_POWER_LEVELS * NUM_LEVEL_FLAGS
            + (self.purchase_power as usize - 1) * NUM_LEVEL_FLAGS
            + self.high_level as usize
    }

    /// Indices into the 13 categorical feature values (category, power, level).
    pub fn feature_values(&self) -> [usize; 3] {
        [
            self.query_category as usize - 1,
            NUM_CATEGORIES + self.purchase_power as usize - 1,
            NUM_CATEGORIES + NUM_POWER_LEVELS + self.high_level as usize,
        ]
    }

    pub fn encode_into(&self, out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + TYPE_ONEHOT_DIM, 0.0);
        for v in self.feature_values() {
            out[start + v] = 1.0;
        }
        out.extend_from_slice(&self.request);
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(TYPE_ONEHOT_DIM + self.request.len());
        self.encode_into(&mut v);
        v
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale to unit length; a zero vector becomes the first basis vector.
pub fn normalize(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 1e-12 && n.is_finite() {
        v.iter_mut().for_each(|x| *x /= n);
    } else if !v.is_empty() {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
    }
}

/// A ranking-weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EngineAction(pub Vec<f64>);

impl EngineAction {
    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PageIndex(pub u32);

/// ⟨profile, engine action, page⟩ as observed by the customer.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomerState {
    pub profile: CustomerProfile,
    pub action: EngineAction,
    pub page: PageIndex,
}

impl CustomerState {
    pub fn encode_into(&self, out: &mut Vec<f64>, max_index: u32) {
        self.profile.encode_into(out);
        out.extend_from_slice(&self.action.0);
        out.push(self.page.0 as f64 / max_index as f64);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomerAction {
    Buy,
    TurnPage,
    Leave,
}

impl CustomerAction {
    pub const ALL: [CustomerAction; 3] = [CustomerAction::Buy, CustomerAction::TurnPage, CustomerAction::Leave];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

/// One page view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub action: EngineAction,
    pub page: u32,
    pub choice: CustomerAction,
    pub reward: u8,
    #[serde(default)]
    pub price: Option<f64>,
}

/// Page views of one customer, ending in a purchase, a leave or page overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    #[serde(flatten)]
    pub profile: CustomerProfile,
    pub steps: Vec<StepRecord>,
}

impl Session {
    pub fn state(&self, i: usize) -> CustomerState {
        CustomerState {
            profile: self.profile.clone(),
            action: self.steps[i].action.clone(),
            page: PageIndex(self.steps[i].page),
        }
    }

    pub fn purchased(&self) -> bool {
        self.steps.last().is_some_and(|s| s.reward == 1)
    }

    /// Check the structural invariants of a logged session.
    pub fn validate(&self, max_index: u32) -> Result<()> {
        self.profile.validate()?;
        let bad = |m: String| Err(Error::invalid(format!("malformed session: {m}")));
        if self.steps.is_empty() {
            return bad("no steps".into());
        }
        let last = self.steps.len() - 1;
        for (i, st) in self.steps.iter().enumerate() {
            if st.page != i as u32 {
                return bad(format!("step {i} has page {}", st.page));
            }
            if st.page > max_index {
                return bad(format!("page {} beyond max index {max_index}", st.page));
            }
            if st.reward != (st.choice == CustomerAction::Buy) as u8 {
                return bad(format!("step {i} reward {} disagrees with {:?}", st.reward, st.choice));
            }
            if i < last && st.choice != CustomerAction::TurnPage {
                return bad(format!("session continues after {:?}", st.choice));
            }
            if st.action != self.steps[0].action {
                return bad("engine action changed within a session".into());
            }
            if st.price.is_some_and(|p| !(p > 0.0 && p.is_finite())) || (st.price.is_some() && st.reward == 0) {
                return bad(format!("invalid price on step {i}"));
            }
        }
        if self.steps[last].choice == CustomerAction::TurnPage && self.steps[last].page != max_index {
            return bad("session ends on a page turn before overflow".into());
        }
        Ok(())
    }
}

/// Source of fresh customers (the P^c of the marketplace).
pub trait CustomerSampler: Sync {
    fn sample(&self, rng: &mut SimRng) -> CustomerProfile;

    /// One profile per stream; overridden by samplers that batch work.
    fn sample_batch(&self, rngs: &mut [SimRng]) -> Vec<CustomerProfile> {
        rngs.iter_mut().map(|r| self.sample(r)).collect()
    }
}

/// Maps a profile to a (possibly random) engine action.
pub trait EnginePolicy: Sync {
    fn act(&self, profile: &CustomerProfile, rng: &mut SimRng) -> EngineAction;

    fn act_batch(&self, profiles: &[CustomerProfile], rngs: &mut [SimRng]) -> Vec<EngineAction> {
        profiles.iter().zip(rngs.iter_mut()).map(|(p, r)| self.act(p, r)).collect()
    }
}

/// Maps a customer state to probabilities of (buy, turn page, leave).
pub trait CustomerPolicy: Sync {
    fn probs(&self, state: &CustomerState) -> [f64; 3];

    fn probs_batch(&self, states: &[CustomerState]) -> Vec<[f64; 3]> {
        states.iter().map(|s| self.probs(s)).collect()
    }
}

impl<T: CustomerSampler + ?Sized> CustomerSampler for &T {
    fn sample(&self, rng: &mut SimRng) -> CustomerProfile {
        (**self).sample(rng)
    }
    fn sample_batch(&self, rngs: &mut [SimRng]) -> Vec<CustomerProfile> {
        (**self).sample_batch(rngs)
    }
}

impl<T: EnginePolicy + ?Sized> EnginePolicy for &T {
    fn act(&self, profile: &CustomerProfile, rng: &mut SimRng) -> EngineAction {
        (**self).act(profile, rng)
    }
    fn act_batch(&self, profiles: &[CustomerProfile], rngs: &mut [SimRng]) -> Vec<EngineAction> {
        (**self).act_batch(profiles, rngs)
    }
}

impl<T: CustomerPolicy + ?Sized> CustomerPolicy for &T {
    fn probs(&self, state: &CustomerState) -> [f64; 3] {
        (**self).probs(state)
    }
    fn probs_batch(&self, states: &[CustomerState]) -> Vec<[f64; 3]> {
        (**self).probs_batch(states)
    }
}

/// Always returns the same profile.
#[derive(Debug, Clone)]
pub struct FixedSampler(pub CustomerProfile);

impl CustomerSampler for FixedSampler {
    fn sample(&self, _rng: &mut SimRng) -> CustomerProfile {
        self.0.clone()
    }
}

/// Resamples profiles uniformly from a fixed list (e.g. the logged customers).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSampler(pub Vec<CustomerProfile>);

impl EmpiricalSampler {
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        if data.sessions.is_empty() {
            return Err(Error::invalid("empirical sampler needs at least one session"));
        }
        Ok(EmpiricalSampler(data.sessions.iter().map(|s| s.profile.clone()).collect()))
    }
}

impl CustomerSampler for EmpiricalSampler {
    fn sample(&self, rng: &mut SimRng) -> CustomerProfile {
        self.0[rng.random_range(0..self.0.len())].clone()
    }
}

/// Always proposes the same action.
#[derive(Debug, Clone)]
pub struct FixedEngine(pub EngineAction);

impl EnginePolicy for FixedEngine {
    fn act(&self, _profile: &CustomerProfile, _rng: &mut SimRng) -> EngineAction {
        self.0.clone()
    }
}

/// Independent uniform components on `[-half_width, half_width]`; the
/// logging policy of the marketplace.
#[derive(Debug, Clone, Copy)]
pub struct UniformEngine {
    pub dim: usize,
    pub half_width: f64,
}

impl EnginePolicy for UniformEngine {
    fn act(&self, _profile: &CustomerProfile, rng: &mut SimRng) -> EngineAction {
        use rand::Rng;
        EngineAction((0..self.dim).map(|_| rng.random_range(-self.half_width..=self.half_width)).collect())
    }
}

/// State-independent action distribution.
#[derive(Debug, Clone, Copy)]
pub struct ConstantCustomer(pub [f64; 3]);

impl CustomerPolicy for ConstantCustomer {
    fn probs(&self, _state: &CustomerState) -> [f64; 3] {
        self.0
    }
}
