use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use vtlab_core::baselines::{train_bc, BcConfig};
use vtlab_core::gansd::{sample_customers, train_gansd, GansdConfig, TypeDistribution};
use vtlab_core::mail::{train_mail, warm_start, MailConfig, VirtualEnvironment};
use vtlab_core::market::{
    compute_metrics, feature_r2p, rollout_sessions, CustomerSampler, DatasetMeta, EmpiricalSampler, EnginePolicy,
    NUM_CATEGORIES, NUM_FEATURE_VALUES, NUM_POWER_LEVELS,
};
use vtlab_core::oracle::{drift, generate_log, total_variation, DriftSchedule, OracleMarket, OracleParams};
use vtlab_core::policy::{EngineNet, TrpoConfig};
use vtlab_core::rng::{derive_seed, Domain};
use vtlab_core::{Error, Result};

use crate::report::{pearson, relative_gap, Check, ExperimentReport, Summary};

pub const MAX_FEATURE_TV: f64 = 0.05;
pub const MAX_R2P_GAP: f64 = 0.15;
pub const MIN_FEATURE_CORRELATION: f64 = 0.8;
pub const MIN_TIME_CORRELATION: f64 = 0.7;
/// Seeds (out of five) an arm must win for directional claims.
pub const MIN_SEED_WINS: usize = 4;

pub const FIG3: &str = "fig3_proportions";
pub const FIG4: &str = "fig4_r2p_features";
pub const FIG5: &str = "fig5_r2p_time";
pub const FIG6: &str = "fig6_anc";
pub const GEN_TABLE: &str = "gen_table";
pub const FIG7: &str = "fig7_rl_sl";
pub const ALL_EXPERIMENTS: [&str; 6] = [FIG3, FIG4, FIG5, FIG6, GEN_TABLE, FIG7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub seeds: usize,
    /// Sessions per policy evaluation.
    pub eval_sessions: usize,
    pub distribution_samples: usize,
    pub fidelity_sessions: usize,
    /// Feature values with fewer page views are flagged low-confidence.
    pub min_feature_pvs: usize,
    pub drift_levels: Vec<f64>,
    /// Logged sessions per time slot.
    pub slot_sessions: usize,
    pub slot_gansd_iterations: usize,
    pub slot_mail_iterations: usize,
    pub slot_bc_epochs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seeds: 5,
            eval_sessions: 50_000,
            distribution_samples: 1_000_000,
            fidelity_sessions: 200_000,
            min_feature_pvs: 100,
            drift_levels: vec![0.2, 0.5, 1.0],
            slot_sessions: 50_000,
            slot_gansd_iterations: 1000,
            slot_mail_iterations: 15,
            slot_bc_epochs: 15,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 || self.eval_sessions == 0 || self.distribution_samples == 0 || self.fidelity_sessions == 0 {
            return Err(Error::invalid("bench: seeds and sample counts must be positive"));
        }
        if self.slot_sessions == 0 {
            return Err(Error::invalid("bench: slot_sessions must be positive"));
        }
        if self.drift_levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::invalid("bench: drift levels must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-experiment seeds derived from the global seed.
pub fn bench_seeds(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| derive_seed(seed, Domain::Evaluation, k)).collect()
}

/// Label of a categorical feature value, indexed as `CustomerProfile::feature_values`.
pub fn feature_label(v: usize) -> String {
    if v < NUM_CATEGORIES {
        format!("category_{v}")
    } else if v < NUM_CATEGORIES + NUM_POWER_LEVELS {
        format!("power_{}", v - NUM_CATEGORIES)
    } else {
        format!("level_{}", v - NUM_CATEGORIES - NUM_POWER_LEVELS)
    }
}

fn meta(name: &str, level: f64, seed: u64) -> DatasetMeta {
    DatasetMeta {
        logging_policy: name.into(),
        time_slice: None,
        drift_level: level,
        seed,
    }
}

/// Outcome of a policy deployed in the ground-truth marketplace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEval {
    pub r2p: f64,
    pub tt: f64,
    pub tv: f64,
    pub mean_action_norm: f64,
}

pub fn oracle_eval<E: EnginePolicy + ?Sized>(
    oracle: &OracleMarket,
    engine: &E,
    sessions: usize,
    seed: u64,
    threads: usize,
) -> Result<OracleEval> {
    let data = generate_log(oracle, engine, sessions, seed, meta("evaluated", 0.0, seed), threads)?;
    let m = compute_metrics(&data.sessions)?;
    Ok(OracleEval {
        r2p: m.r2p,
        tt: m.tt,
        tv: m.tv,
        mean_action_norm: m.action_norm_mean,
    })
}

pub fn virtual_r2p<E: EnginePolicy + ?Sized>(
    env: &VirtualEnvironment,
    engine: &E,
    sessions: usize,
    seed: u64,
    threads: usize,
) -> Result<f64> {
    let s = rollout_sessions(engine, &*env.customer, &*env.sampler, sessions, seed, env.dims, threads);
    Ok(compute_metrics(&s)?.r2p)
}

fn report<T: Serialize>(
    experiment: &str,
    hash: &str,
    seeds: Vec<u64>,
    results: &T,
    aggregate: BTreeMap<String, Summary>,
    checks: Vec<Check>,
) -> Result<ExperimentReport> {
    Ok(ExperimentReport {
        experiment: experiment.into(),
        config_hash: hash.into(),
        seeds,
        results: serde_json::to_value(results)?,
        aggregate,
        checks,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".into(), |v| v.to_string())
}

// ---------------------------------------------------------------------------
// customer distribution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProportions {
    pub feature: String,
    pub real: Vec<f64>,
    pub virtual_: Vec<f64>,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMatch {
    pub samples: usize,
    pub features: Vec<FeatureProportions>,
}

pub fn exp_distribution_match<S: CustomerSampler + ?Sized>(
    virtual_sampler: &S,
    oracle: &OracleMarket,
    samples: usize,
    seed: u64,
    threads: usize,
) -> Result<DistributionMatch> {
    let v = TypeDistribution::from_profiles(&sample_customers(virtual_sampler, samples, derive_seed(seed, Domain::Sampler, 0), threads))?;
    let r = TypeDistribution::from_profiles(&sample_customers(oracle, samples, derive_seed(seed, Domain::Sampler, 1), threads))?;
    let names = ["query_category", "purchase_power", "high_level"];
    let features = (0..3)
        .map(|k| FeatureProportions {
            feature: names[k].into(),
            tv: total_variation(&r.blocks[k], &v.blocks[k]),
            real: r.blocks[k].clone(),
            virtual_: v.blocks[k].clone(),
        })
        .collect();
    Ok(DistributionMatch { samples, features })
}

impl DistributionMatch {
    pub fn max_tv(&self) -> f64 {
        self.features.iter().map(|f| f.tv).fold(0.0, f64::max)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("feature,value,real,virtual,feature_tv\n");
        for f in &self.features {
            for (i, (r, v)) in f.real.iter().zip(&f.virtual_).enumerate() {
                s.push_str(&format!("{},{i},{r},{v},{}\n", f.feature, f.tv));
            }
        }
        s
    }

    pub fn report(&self, hash: &str, seed: u64) -> Result<ExperimentReport> {
        let mut agg = BTreeMap::new();
        for f in &self.features {
            agg.insert(format!("tv_{}", f.feature), Summary::of(&[f.tv]));
        }
        let checks = vec![Check::new(
            "per-feature TV within threshold",
            self.max_tv() <= MAX_FEATURE_TV,
            format!("max TV {:.4} (limit {MAX_FEATURE_TV})", self.max_tv()),
        )];
        report(FIG3, hash, vec![seed], self, agg, checks)
    }
}

// ---------------------------------------------------------------------------
// R2P per feature value

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureR2p {
    pub feature_value: usize,
    pub label: String,
    pub real: f64,
    pub virtual_: f64,
    pub real_pvs: usize,
    pub virtual_pvs: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2pFidelity {
    pub sessions: usize,
    pub real_r2p: f64,
    pub virtual_r2p: f64,
    pub relative_gap: f64,
    pub correlation: Option<f64>,
    pub features: Vec<FeatureR2p>,
}

fn rate((pv, buys): (usize, usize)) -> f64 {
    if pv == 0 {
        0.0
    } else {
        buys as f64 / pv as f64
    }
}

pub fn exp_r2p_fidelity<E: EnginePolicy + ?Sized>(
    env: &VirtualEnvironment,
    oracle: &OracleMarket,
    logging: &E,
    sessions: usize,
    min_pvs: usize,
    seed: u64,
    threads: usize,
) -> Result<R2pFidelity> {
    let dims = oracle.dims();
    let real = rollout_sessions(logging, oracle, oracle, sessions, seed, dims, threads);
    let virt = rollout_sessions(logging, &*env.customer, &*env.sampler, sessions, seed, dims, threads);
    let (r, v) = (compute_metrics(&real)?.r2p, compute_metrics(&virt)?.r2p);
    let (fr, fv) = (feature_r2p(&real), feature_r2p(&virt));
    let features: Vec<FeatureR2p> = (0..NUM_FEATURE_VALUES)
        .map(|k| FeatureR2p {
            feature_value: k,
            label: feature_label(k),
            real: rate(fr[k]),
            virtual_: rate(fv[k]),
            real_pvs: fr[k].0,
            virtual_pvs: fv[k].0,
            low_confidence: fr[k].0.min(fv[k].0) < min_pvs,
        })
        .collect();
    let a: Vec<f64> = features.iter().map(|f| f.real).collect();
    let b: Vec<f64> = features.iter().map(|f| f.virtual_).collect();
    Ok(R2pFidelity {
        sessions,
        real_r2p: r,
        virtual_r2p: v,
        relative_gap: relative_gap(v, r),
        correlation: pearson(&a, &b),
        features,
    })
}

impl R2pFidelity {
    pub fn csv(&self) -> String {
        let mut s = String::from("feature_value,label,real_r2p,virtual_r2p,real_pvs,virtual_pvs,low_confidence\n");
        for f in &self.features {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                f.feature_value, f.label, f.real, f.virtual_, f.real_pvs, f.virtual_pvs, f.low_confidence
            ));
        }
        s.push_str(&format!("overall,all,{},{},,,\n", self.real_r2p, self.virtual_r2p));
        s
    }

    pub fn report(&self, hash: &str, seed: u64) -> Result<ExperimentReport> {
        let mut agg = BTreeMap::new();
        agg.insert("relative_gap".into(), Summary::of(&[self.relative_gap]));
        agg.insert("correlation".into(), Summary::of(&[self.correlation.unwrap_or(f64::NAN)]));
        let checks = vec![
            Check::new(
                "overall R2P gap within threshold",
                self.relative_gap <= MAX_R2P_GAP,
                format!(
                    "real {:.4}, virtual {:.4}, relative gap {:.4} (limit {MAX_R2P_GAP})",
                    self.real_r2p, self.virtual_r2p, self.relative_gap
                ),
            ),
            Check::new(
                "per-feature R2P correlation",
                self.correlation.is_some_and(|c| c >= MIN_FEATURE_CORRELATION),
                format!("pearson {} (minimum {MIN_FEATURE_CORRELATION})", fmt_opt(self.correlation)),
            ),
        ];
        report(FIG4, hash, vec![seed], self, agg, checks)
    }
}

// ---------------------------------------------------------------------------
// R2P over drifting time slots

/// Budgets for the environments rebuilt in every time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPipeline {
    pub sessions: usize,
    pub eval_sessions: usize,
    pub gansd: GansdConfig,
    pub mail: MailConfig,
    /// Cloned customer used to warm start the slot's imitation.
    pub bc: BcConfig,
    pub trpo: TrpoConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotR2p {
    pub slot: u32,
    pub level: f64,
    pub real: f64,
    pub virtual_: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2pOverTime {
    pub schedule: String,
    pub slots: Vec<SlotR2p>,
    pub correlation: Option<f64>,
}

/// Rebuild a virtual environment from each slot's logs and compare the
/// logging policy's R2P in it with the drifted ground truth.
pub fn exp_r2p_over_time(
    base: &OracleParams,
    schedule: &DriftSchedule,
    cfg: &SlotPipeline,
    seed: u64,
    threads: usize,
) -> Result<R2pOverTime> {
    let drift_seed = derive_seed(seed, Domain::Drift, 0);
    let mut slots = Vec::with_capacity(schedule.slices.len());
    for &(slot, level) in &schedule.slices {
        let k = slot as u64;
        let market = OracleMarket::new(drift(base, level, drift_seed)?)?;
        let dims = market.dims();
        let logging = market.logging_policy();
        let log_seed = derive_seed(seed, Domain::Session, k);
        let mut m = meta("uniform", level, log_seed);
        m.time_slice = Some(slot);
        let data = generate_log(&market, &logging, cfg.sessions, log_seed, m, threads)?;
        let (gansd, _) = train_gansd(&data, &cfg.gansd, dims, derive_seed(seed, Domain::Training, 2 * k))?;
        let expert_profiles = EmpiricalSampler::from_dataset(&data)?;
        let mail_seed = derive_seed(seed, Domain::Training, 2 * k + 1);
        let init = if cfg.mail.warm_start {
            let bc = train_bc(&data, dims, &cfg.bc, derive_seed(seed, Domain::Training, 100 + k))?;
            warm_start(dims, &cfg.mail, &bc, mail_seed)?
        } else {
            None
        };
        let mail = train_mail(&data, &expert_profiles, dims, &cfg.mail, &cfg.trpo, init, mail_seed)?;
        let eval_seed = derive_seed(seed, Domain::Evaluation, k);
        let real = oracle_eval(&market, &logging, cfg.eval_sessions, eval_seed, threads)?.r2p;
        let virt = rollout_sessions(&logging, &mail.customer(), &gansd, cfg.eval_sessions, eval_seed, dims, threads);
        slots.push(SlotR2p {
            slot,
            level,
            real,
            virtual_: compute_metrics(&virt)?.r2p,
        });
    }
    let a: Vec<f64> = slots.iter().map(|s| s.real).collect();
    let b: Vec<f64> = slots.iter().map(|s| s.virtual_).collect();
    Ok(R2pOverTime {
        schedule: schedule.name.clone(),
        correlation: pearson(&a, &b),
        slots,
    })
}

impl R2pOverTime {
    pub fn csv(&self) -> String {
        let mut s = String::from("slot,drift_level,real_r2p,virtual_r2p\n");
        for p in &self.slots {
            s.push_str(&format!("{},{},{},{}\n", p.slot, p.level, p.real, p.virtual_));
        }
        s
    }

    pub fn report(&self, hash: &str, seed: u64) -> Result<ExperimentReport> {
        let a: Vec<f64> = self.slots.iter().map(|s| s.real).collect();
        let b: Vec<f64> = self.slots.iter().map(|s| s.virtual_).collect();
        let mut agg = BTreeMap::new();
        agg.insert("real_r2p".into(), Summary::of(&a));
        agg.insert("virtual_r2p".into(), Summary::of(&b));
        let checks = vec![Check::new(
            "virtual R2P tracks the real series",
            self.correlation.is_some_and(|c| c >= MIN_TIME_CORRELATION),
            format!("pearson {} (minimum {MIN_TIME_CORRELATION})", fmt_opt(self.correlation)),
        )];
        report(FIG5, hash, vec![seed], self, agg, checks)
    }
}

// ---------------------------------------------------------------------------
// action-norm constraint

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub real: OracleEval,
    pub virtual_r2p: f64,
    pub gap: f64,
}

pub fn eval_policy<E: EnginePolicy + ?Sized>(
    env: &VirtualEnvironment,
    oracle: &OracleMarket,
    engine: &E,
    sessions: usize,
    seed: u64,
    threads: usize,
) -> Result<PolicyEval> {
    let real = oracle_eval(oracle, engine, sessions, seed, threads)?;
    let v = virtual_r2p(env, engine, sessions, seed, threads)?;
    Ok(PolicyEval {
        real,
        virtual_r2p: v,
        gap: relative_gap(v, real.r2p),
    })
}

/// Policies with and without the constraint, trained under one seed.
pub struct AncArm<'a> {
    pub seed: u64,
    pub plain: &'a EngineNet,
    pub anc: &'a EngineNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AncRow {
    pub seed: u64,
    pub plain: PolicyEval,
    pub anc: PolicyEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncComparison {
    pub rows: Vec<AncRow>,
    pub r2p_wins: usize,
    pub gap_wins: usize,
}

pub fn exp_anc(
    arms: &[AncArm],
    env: &VirtualEnvironment,
    oracle: &OracleMarket,
    sessions: usize,
    threads: usize,
) -> Result<AncComparison> {
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let eval_seed = derive_seed(arm.seed, Domain::Evaluation, 1);
        rows.push(AncRow {
            seed: arm.seed,
            plain: eval_policy(env, oracle, arm.plain, sessions, eval_seed, threads)?,
            anc: eval_policy(env, oracle, arm.anc, sessions, eval_seed, threads)?,
        });
    }
    Ok(AncComparison {
        r2p_wins: rows.iter().filter(|r| r.anc.real.r2p > r.plain.real.r2p).count(),
        gap_wins: rows.iter().filter(|r| r.anc.gap <= r.plain.gap).count(),
        rows,
    })
}

impl AncComparison {
    pub fn csv(&self) -> String {
        let mut s = String::from("seed,arm,real_r2p,virtual_r2p,gap,tt,tv,mean_action_norm\n");
        for r in &self.rows {
            for (name, e) in [("trpo", &r.plain), ("trpo_anc", &r.anc)] {
                s.push_str(&format!(
                    "{},{name},{},{},{},{},{},{}\n",
                    r.seed, e.real.r2p, e.virtual_r2p, e.gap, e.real.tt, e.real.tv, e.real.mean_action_norm
                ));
            }
        }
        s
    }

    pub fn report(&self, hash: &str) -> Result<ExperimentReport> {
        let col = |f: fn(&AncRow) -> f64| Summary::of(&self.rows.iter().map(f).collect::<Vec<_>>());
        let mut agg = BTreeMap::new();
        agg.insert("trpo_real_r2p".into(), col(|r| r.plain.real.r2p));
        agg.insert("anc_real_r2p".into(), col(|r| r.anc.real.r2p));
        agg.insert("trpo_gap".into(), col(|r| r.plain.gap));
        agg.insert("anc_gap".into(), col(|r| r.anc.gap));
        agg.insert("trpo_action_norm".into(), col(|r| r.plain.real.mean_action_norm));
        agg.insert("anc_action_norm".into(), col(|r| r.anc.real.mean_action_norm));
        let n = self.rows.len();
        let need = MIN_SEED_WINS.min(n);
        let checks = vec![
            Check::new(
                "constrained policy earns more real R2P",
                self.r2p_wins >= need,
                format!("{}/{n} seeds (need {need})", self.r2p_wins),
            ),
            Check::new(
                "constrained policy has the smaller virtual-real gap",
                self.gap_wins >= need,
                format!("{}/{n} seeds (need {need})", self.gap_wins),
            ),
        ];
        report(FIG6, hash, self.rows.iter().map(|r| r.seed).collect(), self, agg, checks)
    }
}

// ---------------------------------------------------------------------------
// generalization under drift

pub struct GeneralizationArm<'a> {
    pub seed: u64,
    pub mail: &'a EngineNet,
    pub bc: &'a EngineNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub seed: u64,
    pub level: f64,
    pub random: f64,
    pub mail: f64,
    pub bc: f64,
}

impl DriftRow {
    /// Relative R2P improvement of the MAIL-environment policy over random.
    pub fn mail_gain(&self) -> f64 {
        self.mail / self.random - 1.0
    }

    pub fn bc_gain(&self) -> f64 {
        self.bc / self.random - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generalization {
    pub levels: Vec<f64>,
    pub rows: Vec<DriftRow>,
}

/// Evaluate each arm's policies in its drifted ground truths; a drift-0
/// control row precedes the requested levels.
pub fn exp_generalization(
    arms: &[GeneralizationArm],
    base: &OracleParams,
    levels: &[f64],
    sessions: usize,
    threads: usize,
) -> Result<Generalization> {
    let mut all = vec![0.0];
    all.extend(levels.iter().copied().filter(|&l| l != 0.0));
    let mut rows = Vec::new();
    for arm in arms {
        let drift_seed = derive_seed(arm.seed, Domain::Drift, 0);
        for (k, &level) in all.iter().enumerate() {
            let market = OracleMarket::new(drift(base, level, drift_seed)?)?;
            let eval_seed = derive_seed(arm.seed, Domain::Evaluation, 10 + k as u64);
            rows.push(DriftRow {
                seed: arm.seed,
                level,
                random: oracle_eval(&market, &market.logging_policy(), sessions, eval_seed, threads)?.r2p,
                mail: oracle_eval(&market, arm.mail, sessions, eval_seed, threads)?.r2p,
                bc: oracle_eval(&market, arm.bc, sessions, eval_seed, threads)?.r2p,
            });
        }
    }
    Ok(Generalization { levels: all, rows })
}

impl Generalization {
    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.dedup();
        s
    }

    fn row(&self, seed: u64, level: f64) -> Option<&DriftRow> {
        self.rows.iter().find(|r| r.seed == seed && r.level == level)
    }

    /// `(mail decay, bc decay)`: drop in relative gain over random from the
    /// lowest to the highest nonzero level.
    pub fn decays(&self, seed: u64) -> Option<(f64, f64)> {
        let lo = *self.levels.iter().find(|&&l| l > 0.0)?;
        let hi = *self.levels.last()?;
        let (a, b) = (self.row(seed, lo)?, self.row(seed, hi)?);
        Some((a.mail_gain() - b.mail_gain(), a.bc_gain() - b.bc_gain()))
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("seed,drift_level,random_r2p,mail_env_r2p,bc_env_r2p,mail_vs_random,bc_vs_random\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.seed,
                r.level,
                r.random,
                r.mail,
                r.bc,
                r.mail_gain(),
                r.bc_gain()
            ));
        }
        s
    }

    pub fn report(&self, hash: &str) -> Result<ExperimentReport> {
        let seeds = self.seeds();
        let n = seeds.len();
        let majority = n / 2 + 1;
        let nonzero: Vec<f64> = self.levels.iter().copied().filter(|&l| l > 0.0).collect();
        let mail_holds = seeds
            .iter()
            .filter(|&&s| nonzero.iter().all(|&l| self.row(s, l).is_some_and(|r| r.mail >= r.random)))
            .count();
        let decays: Vec<(f64, f64)> = seeds.iter().filter_map(|&s| self.decays(s)).collect();
        let mail_decay = Summary::of(&decays.iter().map(|d| d.0).collect::<Vec<_>>());
        let bc_decay = Summary::of(&decays.iter().map(|d| d.1).collect::<Vec<_>>());
        let top = nonzero.last().copied().unwrap_or(0.0);
        let bc_below = seeds
            .iter()
            .filter(|&&s| self.row(s, top).is_some_and(|r| r.bc < r.random))
            .count();
        let mut agg = BTreeMap::new();
        agg.insert("mail_decay".into(), mail_decay);
        agg.insert("bc_decay".into(), bc_decay);
        for &l in &self.levels {
            let at: Vec<&DriftRow> = self.rows.iter().filter(|r| r.level == l).collect();
            agg.insert(format!("mail_vs_random@{l}"), Summary::of(&at.iter().map(|r| r.mail_gain()).collect::<Vec<_>>()));
            agg.insert(format!("bc_vs_random@{l}"), Summary::of(&at.iter().map(|r| r.bc_gain()).collect::<Vec<_>>()));
        }
        let checks = vec![
            Check::new(
                "MAIL-environment policy stays at or above random",
                mail_holds >= majority,
                format!("{mail_holds}/{n} seeds at every drift level (need {majority})"),
            ),
            Check::new(
                "BC-environment policy decays at least as fast",
                bc_decay.mean >= mail_decay.mean,
                format!("mean decay bc {:.5} vs mail {:.5}", bc_decay.mean, mail_decay.mean),
            ),
            Check::new(
                "BC-environment policy falls below random at the largest drift",
                bc_below >= majority,
                format!("{bc_below}/{n} seeds at drift {top} (need {majority})"),
            ),
        ];
        report(GEN_TABLE, hash, seeds, self, agg, checks)
    }
}

// ---------------------------------------------------------------------------
// reinforcement learning against supervised baselines

pub struct RlSlArm<'a> {
    pub seed: u64,
    pub rl: &'a EngineNet,
    pub sl1: &'a EngineNet,
    pub sl2: &'a EngineNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlSlRow {
    pub seed: u64,
    pub random: OracleEval,
    pub rl: OracleEval,
    pub sl1: OracleEval,
    pub sl2: OracleEval,
}

impl RlSlRow {
    pub fn ordered(&self) -> bool {
        self.sl1.r2p <= self.sl2.r2p && self.sl2.r2p <= self.rl.r2p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlVsSl {
    pub rows: Vec<RlSlRow>,
    pub ordered_seeds: usize,
    /// Mean RL R2P over the mean of the better supervised policy, minus one.
    pub rl_improvement: f64,
}

/// All arms of a seed share one evaluation seed, so comparisons are paired.
pub fn exp_rl_vs_sl(arms: &[RlSlArm], oracle: &OracleMarket, sessions: usize, threads: usize) -> Result<RlVsSl> {
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let s = derive_seed(arm.seed, Domain::Evaluation, 2);
        rows.push(RlSlRow {
            seed: arm.seed,
            random: oracle_eval(oracle, &oracle.logging_policy(), sessions, s, threads)?,
            rl: oracle_eval(oracle, arm.rl, sessions, s, threads)?,
            sl1: oracle_eval(oracle, arm.sl1, sessions, s, threads)?,
            sl2: oracle_eval(oracle, arm.sl2, sessions, s, threads)?,
        });
    }
    let mean = |f: fn(&RlSlRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64;
    let best_sl = mean(|r| r.sl1.r2p).max(mean(|r| r.sl2.r2p));
    Ok(RlVsSl {
        ordered_seeds: rows.iter().filter(|r| r.ordered()).count(),
        rl_improvement: mean(|r| r.rl.r2p) / best_sl - 1.0,
        rows,
    })
}

impl RlVsSl {
    pub fn csv(&self) -> String {
        let mut s = String::from("seed,arm,r2p,tt,tv,tt_vs_random,tv_vs_random\n");
        for r in &self.rows {
            for (name, e) in [("random", &r.random), ("sl1", &r.sl1), ("sl2", &r.sl2), ("rl", &r.rl)] {
                s.push_str(&format!(
                    "{},{name},{},{},{},{},{}\n",
                    r.seed,
                    e.r2p,
                    e.tt,
                    e.tv,
                    e.tt / r.random.tt - 1.0,
                    e.tv / r.random.tv - 1.0
                ));
            }
        }
        s
    }

    pub fn report(&self, hash: &str) -> Result<ExperimentReport> {
        let col = |f: fn(&RlSlRow) -> f64| Summary::of(&self.rows.iter().map(f).collect::<Vec<_>>());
        let mut agg = BTreeMap::new();
        agg.insert("random_r2p".into(), col(|r| r.random.r2p));
        agg.insert("sl1_r2p".into(), col(|r| r.sl1.r2p));
        agg.insert("sl2_r2p".into(), col(|r| r.sl2.r2p));
        agg.insert("rl_r2p".into(), col(|r| r.rl.r2p));
        agg.insert("rl_tt_vs_random".into(), col(|r| r.rl.tt / r.random.tt - 1.0));
        agg.insert("rl_tv_vs_random".into(), col(|r| r.rl.tv / r.random.tv - 1.0));
        agg.insert("rl_improvement_over_best_sl".into(), Summary::of(&[self.rl_improvement]));
        let n = self.rows.len();
        let need = MIN_SEED_WINS.min(n);
        let checks = vec![
            Check::new(
                "R2P ordering SL1 <= SL2 <= RL",
                self.ordered_seeds >= need,
                format!("{}/{n} seeds (need {need})", self.ordered_seeds),
            ),
            Check::new(
                "RL improves on the best supervised policy",
                self.rl_improvement > 0.0,
                format!("relative improvement {:.4}", self.rl_improvement),
            ),
        ];
        report(FIG7, hash, self.rows.iter().map(|r| r.seed).collect(), self, agg, checks)
    }
}
