//! Synthetic ground-truth marketplace.
//!
//! A hidden customer population and a three-way logit behavior model stand
//! in for the live platform: they generate the logged sessions every learned
//! component trains on, and they adjudicate how good trained policies really
//! are. Prices exist only here.
//!
//! Behavior at ⟨s, a, n⟩ for a customer of type `t` with request `r`:
//!
//! ```text
//! buy   = bias[t] + affinity·⟨w[t] + C·r, a⟩ − overreach·max(‖a‖ − comfort, 0)² − fatigue·n
//! turn  = turn_bias − fatigue·n
//! leave = leave_bias
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    l2_norm, normalize, rollout_sessions, CustomerPolicy, CustomerProfile, CustomerSampler, CustomerState, Dataset,
    DatasetMeta, EnginePolicy, MarketDims, UniformEngine, NUM_CATEGORIES, NUM_LEVEL_FLAGS, NUM_POWER_LEVELS, NUM_TYPES,
};
use crate::rng::{stream, Domain, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    pub dims: MarketDims,
    /// Probability of each of the 48 customer types.
    pub population: Vec<f64>,
    /// Unit mean request direction per query category.
    pub request_means: Vec<Vec<f64>>,
    pub request_noise: f64,
    /// Preference vector per customer type.
    pub preferences: Vec<Vec<f64>>,
    /// `action_dim × request_dim` map from the request to a preference shift.
    pub request_coupling: Vec<Vec<f64>>,
    pub buy_bias: Vec<f64>,
    pub affinity: f64,
    pub turn_bias: f64,
    pub leave_bias: f64,
    /// Per-page decrease of the buy and turn logits.
    pub fatigue: f64,
    /// Action norm beyond which customers react badly.
    pub comfort_radius: f64,
    pub overreach_penalty: f64,
    /// Base price per purchase-power level.
    pub price_base: [f64; 3],
    /// Log-normal price noise.
    pub price_sigma: f64,
    /// Half-width of the uniform logging policy.
    pub logging_half_width: f64,
}

/// Seed of the fixed default marketplace.
pub const DEFAULT_ORACLE_SEED: u64 = 20180501;

impl OracleParams {
    /// The default marketplace, calibrated so the uniform logging policy sees
    /// a purchase rate near 0.1 per page view.
    pub fn calibrated(dims: MarketDims) -> Self {
        let mut rng = stream(DEFAULT_ORACLE_SEED, Domain::Init, 0);
        let (d, q) = (dims.action_dim, dims.request_dim);
        let cat_w = [0.16, 0.14, 0.13, 0.12, 0.12, 0.12, 0.11, 0.10];
        let pow_w = [0.38, 0.34, 0.28];
        let lvl_w = [0.55, 0.45];
        let cat_eff = [0.6, -0.45, 0.25, -0.6, 0.45, -0.1, 0.1, -0.25];
        let pow_eff = [-0.4, 0.0, 0.4];
        let lvl_eff = [-0.25, 0.25];
        let mut population = Vec::with_capacity(NUM_TYPES);
        let mut buy_bias = Vec::with_capacity(NUM_TYPES);
        for c in 0..NUM_CATEGORIES {
            for p in 0..NUM_POWER_LEVELS {
                for h in 0..NUM_LEVEL_FLAGS {
                    population.push(cat_w[c] * pow_w[p] * lvl_w[h]);
                    buy_bias.push(-1.5 + cat_eff[c] + pow_eff[p] + lvl_eff[h]);
                }
            }
        }
        let total: f64 = population.iter().sum();
        population.iter_mut().for_each(|x| *x /= total);
        let gaussian_unit = |rng: &mut SimRng, n: usize| {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            normalize(&mut v);
            v
        };
        let request_means = (0..NUM_CATEGORIES).map(|_| gaussian_unit(&mut rng, q)).collect();
        let preferences = (0..NUM_TYPES).map(|_| gaussian_unit(&mut rng, d)).collect();
        let coupling_scale = 0.4 / (d as f64).sqrt();
        let request_coupling = (0..d)
            .map(|_| (0..q).map(|_| coupling_scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        OracleParams {
            dims,
            population,
            request_means,
            request_noise: 0.5,
            preferences,
            request_coupling,
            buy_bias,
            affinity: 2.0,
            turn_bias: 0.3,
            leave_bias: 0.0,
            fatigue: 0.3,
            comfort_radius: 1.2,
            overreach_penalty: 3.0,
            price_base: [10.0, 30.0, 100.0],
            price_sigma: 0.25,
            logging_half_width: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, q) = (self.dims.action_dim, self.dims.request_dim);
        let bad = |m: &str| Err(Error::invalid(format!("oracle params: {m}")));
        if self.population.len() != NUM_TYPES || self.buy_bias.len() != NUM_TYPES || self.preferences.len() != NUM_TYPES {
            return bad("per-type tables need 48 entries");
        }
        if self.population.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("population weights must be nonnegative");
        }
        if (self.population.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("population weights must sum to 1");
        }
        if self.request_means.len() != NUM_CATEGORIES || self.request_means.iter().any(|m| m.len() != q) {
            return bad("request means shape");
        }
        if self.preferences.iter().any(|w| w.len() != d)
            || self.request_coupling.len() != d
            || self.request_coupling.iter().any(|r| r.len() != q)
        {
            return bad("preference shapes");
        }
        let scalars = [
            self.request_noise,
            self.affinity,
            self.turn_bias,
            self.leave_bias,
            self.fatigue,
            self.comfort_radius,
            self.overreach_penalty,
            self.price_sigma,
            self.logging_half_width,
        ];
        let tables = self
            .buy_bias
            .iter()
            .chain(self.preferences.iter().flatten())
            .chain(self.request_coupling.iter().flatten())
            .chain(self.request_means.iter().flatten());
        if scalars.iter().chain(tables).any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.price_base.iter().any(|p| !(*p > 0.0)) || self.price_sigma < 0.0 {
            return bad("prices must be positive");
        }
        if self.request_noise < 0.0 || self.overreach_penalty < 0.0 || self.logging_half_width <= 0.0 {
            return bad("negative scale");
        }
        Ok(())
    }

    /// The random engine policy the logs were collected under.
    pub fn logging_policy(&self) -> UniformEngine {
        UniformEngine {
            dim: self.dims.action_dim,
            half_width: self.logging_half_width,
        }
    }

    /// Preference vector of a concrete customer.
    pub fn preference(&self, profile: &CustomerProfile) -> Vec<f64> {
        let mut w = self.preferences[profile.type_index()].clone();
        for (wi, row) in w.iter_mut().zip(&self.request_coupling) {
            *wi += row.iter().zip(&profile.request).map(|(c, r)| c * r).sum::<f64>();
        }
        w
    }

    /// The (buy, turn, leave) logits at a state.
    pub fn logits(&self, state: &CustomerState) -> [f64; 3] {
        let w = self.preference(&state.profile);
        let a = &state.action.0;
        let affinity: f64 = w.iter().zip(a).map(|(x, y)| x * y).sum();
        let over = (l2_norm(a) - self.comfort_radius).max(0.0);
        let n = state.page.0 as f64;
        [
            self.buy_bias[state.profile.type_index()] + self.affinity * affinity
                - self.overreach_penalty * over * over
                - self.fatigue * n,
            self.turn_bias - self.fatigue * n,
            self.leave_bias,
        ]
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&s)?;
        p.validate()?;
        Ok(p)
    }
}

pub fn softmax3(l: [f64; 3]) -> [f64; 3] {
    let m = l[0].max(l[1]).max(l[2]);
    let e = [(l[0] - m).exp(), (l[1] - m).exp(), (l[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Ground-truth sampler and customer policy over validated parameters.
#[derive(Debug, Clone)]
pub struct OracleMarket {
    params: OracleParams,
    cdf: Vec<f64>,
}

impl OracleMarket {
    pub fn new(params: OracleParams) -> Result<Self> {
        params.validate()?;
        let mut acc = 0.0;
        let cdf = params
            .population
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(OracleMarket { params, cdf })
    }

    pub fn params(&self) -> &OracleParams {
        &self.params
    }

    pub fn dims(&self) -> MarketDims {
        self.params.dims
    }

    pub fn logging_policy(&self) -> UniformEngine {
        self.params.logging_policy()
    }

    fn sample_type(&self, rng: &mut SimRng) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[NUM_TYPES - 1];
        self.cdf.partition_point(|&c| c <= u).min(NUM_TYPES - 1)
    }

    /// Purchase price of a customer's basket.
    pub fn price(&self, profile: &CustomerProfile, rng: &mut SimRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.params.price_base[profile.purchase_power as usize - 1] * (self.params.price_sigma * z).exp()
    }
}

impl CustomerSampler for OracleMarket {
    fn sample(&self, rng: &mut SimRng) -> CustomerProfile {
        let t = self.sample_type(rng);
        let c = t / (NUM_POWER_LEVELS * NUM_LEVEL_FLAGS);
        let noise = self.params.request_noise;
        let req: Vec<f64> = self.params.request_means[c]
            .iter()
            .map(|m| m + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        CustomerProfile::from_type(t, req)
    }
}

impl CustomerPolicy for OracleMarket {
    fn probs(&self, state: &CustomerState) -> [f64; 3] {
        softmax3(self.params.logits(state))
    }
}

/// Log `count` sessions of `logging` against the oracle and attach prices.
pub fn generate_log<E: EnginePolicy + ?Sized>(
    market: &OracleMarket,
    logging: &E,
    count: usize,
    seed: u64,
    meta: DatasetMeta,
    threads: usize,
) -> Result<Dataset> {
    generate_log_with(market, logging, market, count, seed, meta, threads)
}

/// As [`generate_log`] with a substitute customer policy (for debugging
/// and degenerate checks).
pub fn generate_log_with<E: EnginePolicy + ?Sized, C: CustomerPolicy + ?Sized>(
    market: &OracleMarket,
    logging: &E,
    customer: &C,
    count: usize,
    seed: u64,
    meta: DatasetMeta,
    threads: usize,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::invalid("need at least one session"));
    }
    let mut sessions = rollout_sessions(logging, customer, market, count, seed, market.dims(), threads);
    for (i, s) in sessions.iter_mut().enumerate() {
        if s.purchased() {
            let mut rng = stream(seed, Domain::Price, i as u64);
            let price = market.price(&s.profile, &mut rng);
            s.steps.last_mut().unwrap().price = Some(price);
        }
    }
    Ok(Dataset { meta, sessions })
}

/// Perturb parameters along fixed-seed Gaussian directions scaled by `level`.
///
/// Level 0 returns the parameters unchanged. The population table is tilted
/// in log space, preferences and buy biases are shifted, and every buy bias
/// moves by a common offset so the overall purchase rate drifts.
pub fn drift(params: &OracleParams, level: f64, seed: u64) -> Result<OracleParams> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::invalid(format!("drift level {level} outside [0, 1]")));
    }
    if level == 0.0 {
        return Ok(params.clone());
    }
    const POPULATION_SCALE: f64 = 0.6;
    const PREFERENCE_SCALE: f64 = 0.5;
    const BIAS_SCALE: f64 = 0.3;
    const SHIFT_SCALE: f64 = 0.5;
    let mut rng = stream(seed, Domain::Drift, 0);
    let mut p = params.clone();
    let mut logits: Vec<f64> = p
        .population
        .iter()
        .map(|&w| w.max(1e-300).ln() + level * POPULATION_SCALE * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logits.iter_mut().for_each(|l| *l = (*l - m).exp());
    let z: f64 = logits.iter().sum();
    p.population = logits.into_iter().map(|e| e / z).collect();
    let per_dim = PREFERENCE_SCALE / (p.dims.action_dim as f64).sqrt();
    for w in p.preferences.iter_mut() {
        for x in w.iter_mut() {
            *x += level * per_dim * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let shift = SHIFT_SCALE * if rng.random::<bool>() { 1.0 } else { -1.0 };
    for b in p.buy_bias.iter_mut() {
        *b += level * (BIAS_SCALE * rng.sample::<f64, _>(StandardNormal) + shift);
    }
    p.validate()?;
    Ok(p)
}

/// Drift level per time slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub name: String,
    pub slices: Vec<(u32, f64)>,
}

impl DriftSchedule {
    /// Twelve consecutive slots of one day; drift rises to a peak at midday
    /// and returns.
    pub fn day_slots() -> Self {
        let slices = (0..12u32)
            .map(|k| (k, 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / 12.0).cos())))
            .collect();
        DriftSchedule {
            name: "12-slot day".into(),
            slices,
        }
    }

    /// Base data, then one day, one week and one month later.
    pub fn day_week_month() -> Self {
        DriftSchedule {
            name: "day/week/month".into(),
            slices: vec![(0, 0.0), (1, 0.2), (2, 0.5), (3, 1.0)],
        }
    }

    pub fn levels(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.1).collect()
    }
}

/// Total-variation distance between two discrete distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{compute_metrics, ConstantCustomer, EngineAction, PageIndex};
    use proptest::prelude::*;

    fn market() -> OracleMarket {
        OracleMarket::new(OracleParams::calibrated(MarketDims::default())).unwrap()
    }

    fn meta() -> DatasetMeta {
        DatasetMeta {
            logging_policy: "uniform".into(),
            time_slice: None,
            drift_level: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn point_mass_population() {
        let mut p = OracleParams::calibrated(MarketDims::default());
        p.population = vec![0.0; NUM_TYPES];
        p.population[29] = 1.0;
        let m = OracleMarket::new(p).unwrap();
        let mut rng = stream(3, Domain::Sampler, 0);
        for _ in 0..2000 {
            let s = m.sample(&mut rng);
            assert_eq!(s.type_index(), 29);
            assert!((l2_norm(&s.request) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_population_frequencies() {
        // Monte-Carlo frequency oracle over 10^6 draws.
        let mut p = OracleParams::calibrated(MarketDims::default());
        p.population = vec![1.0 / NUM_TYPES as f64; NUM_TYPES];
        let m = OracleMarket::new(p).unwrap();
        let mut counts = [0usize; NUM_TYPES];
        let mut rng = stream(5, Domain::Sampler, 0);
        let n = 1_000_000;
        for _ in 0..n {
            counts[m.sample_type(&mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 48.0).abs() < 0.005);
        }
    }

    fn state(m: &OracleMarket, t: usize, action: Vec<f64>, page: u32) -> CustomerState {
        CustomerState {
            profile: CustomerProfile::from_type(t, m.params().request_means[t / 6].clone()),
            action: EngineAction(action),
            page: PageIndex(page),
        }
    }

    #[test]
    fn zero_behavior_weights_are_uniform() {
        let mut p = OracleParams::calibrated(MarketDims::default());
        p.buy_bias = vec![0.0; NUM_TYPES];
        p.affinity = 0.0;
        p.turn_bias = 0.0;
        p.fatigue = 0.0;
        p.overreach_penalty = 0.0;
        let m = OracleMarket::new(p).unwrap();
        let pr = m.probs(&state(&m, 7, vec![3.0; 8], 4));
        for x in pr {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_buy_logit_saturates() {
        let mut p = OracleParams::calibrated(MarketDims::default());
        p.buy_bias = vec![10.0; NUM_TYPES];
        p.turn_bias = 0.0;
        let m = OracleMarket::new(p).unwrap();
        assert!(m.probs(&state(&m, 3, vec![0.0; 8], 0))[0] > 0.99);
    }

    #[test]
    fn calibrated_logging_r2p() {
        let m = market();
        let d = generate_log(&m, &m.logging_policy(), 200_000, 17, meta(), 1).unwrap();
        let r2p = compute_metrics(&d.sessions).unwrap().r2p;
        assert!((0.08..=0.12).contains(&r2p), "r2p = {r2p}");
        d.validate(10).unwrap();
        assert!(d.sessions.iter().filter(|s| s.purchased()).all(|s| s.steps.last().unwrap().price.unwrap() > 0.0));
    }

    #[test]
    fn forced_buy_gets_a_price() {
        let m = market();
        let d = generate_log_with(&m, &m.logging_policy(), &ConstantCustomer([1.0, 0.0, 0.0]), 1, 2, meta(), 1).unwrap();
        assert_eq!(d.sessions.len(), 1);
        assert_eq!(d.num_records(), 1);
        assert!(d.sessions[0].steps[0].price.is_some());
    }

    #[test]
    fn same_seed_same_log() {
        let m = market();
        let a = generate_log(&m, &m.logging_policy(), 500, 4, meta(), 1).unwrap();
        let b = generate_log(&m, &m.logging_policy(), 500, 4, meta(), 2).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_to(&mut x).unwrap();
        b.write_to(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn r2p_falls_with_fatigue() {
        let r2p = |fatigue: f64| {
            let mut p = OracleParams::calibrated(MarketDims::default());
            p.fatigue = fatigue;
            let m = OracleMarket::new(p).unwrap();
            let d = generate_log(&m, &m.logging_policy(), 100_000, 8, meta(), 1).unwrap();
            compute_metrics(&d.sessions).unwrap().r2p
        };
        let (a, b, c) = (r2p(0.1), r2p(0.3), r2p(0.6));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn preference_direction_beats_random_actions_for_every_type() {
        let m = market();
        let p = m.params();
        let mut rng = stream(1, Domain::Evaluation, 0);
        let logging = m.logging_policy();
        for t in 0..NUM_TYPES {
            let mut best = p.preferences[t].clone();
            normalize(&mut best);
            best.iter_mut().for_each(|x| *x *= p.comfort_radius);
            let buy_star = m.probs(&state(&m, t, best, 0))[0];
            let profile = state(&m, t, vec![0.0; 8], 0).profile;
            let avg: f64 = (0..2000)
                .map(|_| {
                    let a = logging.act(&profile, &mut rng);
                    m.probs(&state(&m, t, a.0, 0))[0]
                })
                .sum::<f64>()
                / 2000.0;
            assert!(buy_star > avg, "type {t}: {buy_star} <= {avg}");
        }
    }

    #[test]
    fn zero_drift_is_identity() {
        let p = OracleParams::calibrated(MarketDims::default());
        assert_eq!(drift(&p, 0.0, 9).unwrap(), p);
        assert!(drift(&p, 1.5, 9).is_err());
    }

    #[test]
    fn drift_grows_with_level() {
        let p = OracleParams::calibrated(MarketDims::default());
        for seed in 0..5 {
            let tv: Vec<f64> = [0.2, 0.5, 1.0]
                .iter()
                .map(|&l| total_variation(&p.population, &drift(&p, l, seed).unwrap().population))
                .collect();
            assert!(tv[0] > 0.0 && tv[0] < tv[1] && tv[1] < tv[2], "{tv:?}");
        }
    }

    #[test]
    fn drift_schedules() {
        let day = DriftSchedule::day_slots();
        assert_eq!(day.slices.len(), 12);
        assert_eq!(day.slices[0].1, 0.0);
        assert!((day.slices[6].1 - 1.0).abs() < 1e-12);
        let dwm = DriftSchedule::day_week_month().levels();
        assert!(dwm.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn params_json_roundtrip() {
        let p = OracleParams::calibrated(MarketDims::default());
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<OracleParams>(&s).unwrap(), p);
        assert!(serde_json::from_str::<OracleParams>(&s.replacen("\"affinity\"", "\"affinty\"", 1)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn drifted_markets_stay_valid(level in 0.0f64..=1.0, seed in 0u64..1000, t in 0usize..48, page in 0u32..11,
                                      a in proptest::collection::vec(-3.0f64..3.0, 8)) {
            let p = drift(&OracleParams::calibrated(MarketDims::default()), level, seed).unwrap();
            let m = OracleMarket::new(p).unwrap();
            let pr = m.probs(&state(&m, t, a, page));
            prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(pr.iter().all(|x| *x >= 0.0));
            let d = generate_log(&m, &m.logging_policy(), 50, seed, meta(), 1).unwrap();
            prop_assert!(d.validate(10).is_ok());
        }
    }
}
