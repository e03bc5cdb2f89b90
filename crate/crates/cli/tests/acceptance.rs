//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.
//!
//! Criteria 1-4 call the library directly. Criteria 5-10 and 12 come from a
//! single timed full-scale `run-all`; criterion 11 compares two reduced-scale
//! runs byte for byte. Criterion numbers given as arguments select a subset.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;
use vtlab_bench::{AncComparison, DistributionMatch, ExperimentReport, Generalization, R2pFidelity, R2pOverTime, RlVsSl};
use vtlab_core::gansd::{
    discriminator_loss_grad, gansd_discriminator_loss, gansd_generator_loss, joint_type_entropy, sample_customers,
    train_gansd_on, GansdConfig, GansdModel, TypeDistribution,
};
use vtlab_core::mail::{encode_pair, mail_discriminator_loss, MailDiscriminator};
use vtlab_core::market::{CustomerAction, CustomerProfile, CustomerSampler, CustomerState, EngineAction, MarketDims, PageIndex};
use vtlab_core::nn::gradcheck::{central_difference, max_relative_error};
use vtlab_core::nn::{Mlp, NetConfig};
use vtlab_core::oracle::{OracleMarket, OracleParams};
use vtlab_core::policy::{
    anc_shape, anc_shape_norm, conjugate_gradient, trpo_step, AncConfig, CategoricalBatch, CategoricalPolicy,
    GaussianBatch, GaussianPolicy, TrpoConfig, TrpoPolicy, ValueNet,
};
use vtlab_core::rng::{stream, Domain, SimRng};

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const KL_SLACK: f64 = 1.5;
const TRPO_FUZZ_STEPS: usize = 100;
const CG_REL_TOL: f64 = 1e-6;
const CG_SYSTEMS: usize = 20;
const MODE_MIN_FREQ: f64 = 0.4;
const ENTROPY_RATIO: f64 = 0.9;
const MODE_SAMPLES: usize = 100_000;
const GANSD_BUDGET: Duration = Duration::from_secs(300);
const MAX_TV: f64 = 0.05;
const MAX_GAP: f64 = 0.15;
const MIN_FEATURE_CORR: f64 = 0.8;
const FIDELITY_BUDGET: Duration = Duration::from_secs(600);
const MIN_TIME_CORR: f64 = 0.7;
const MIN_WINS: usize = 4;
const RUN_BUDGET: Duration = Duration::from_secs(30 * 60);

/// Reduced scale for the determinism comparison.
const REDUCED: &str = r#"
[oracle]
sessions = 4000

[gansd]
iterations = 60

[mail]
iterations = 4
trajectories = 32

[trpo]
iterations = 3
batch_size = 1024
fvp_rows = 256

[bc]
epochs = 1

[sl]
epochs = 3

[bench]
seeds = 2
eval_sessions = 2000
distribution_samples = 20000
fidelity_sessions = 4000
slot_sessions = 1000
slot_gansd_iterations = 10
slot_mail_iterations = 2
slot_bc_epochs = 1
"#;

struct Verdict {
    id: u8,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn verdict(id: u8, name: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict { id, name, passed, detail }
}

fn small_net() -> NetConfig {
    NetConfig {
        hidden: vec![8, 8],
        ..NetConfig::default()
    }
}

fn jitter(params: &mut [f64], rng: &mut SimRng) {
    for p in params {
        *p += rng.random_range(-0.5..0.5);
    }
}

fn random_profiles(rng: &mut SimRng, n: usize, dims: MarketDims) -> Vec<CustomerProfile> {
    let o = OracleMarket::new(OracleParams::calibrated(dims)).unwrap();
    (0..n).map(|_| o.sample(rng)).collect()
}

fn grad_error(analytic: &[f64], f: impl Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
    max_relative_error(analytic, &central_difference(f, x, 1e-5))
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let dims = MarketDims::default();
    let mut rng = stream(101, Domain::Init, 0);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut track = |name: &'static str, e: f64| match worst.iter_mut().find(|w| w.0 == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    let cfg = GansdConfig {
        net: small_net(),
        ..GansdConfig::default()
    };
    for k in 0..GRAD_INSTANCES {
        let mut m = GansdModel::new(cfg.clone(), dims, k as u64).unwrap();
        jitter(m.generator.params_mut(), &mut rng);
        jitter(m.discriminator.params_mut(), &mut rng);
        let data = TypeDistribution::from_profiles(&random_profiles(&mut rng, 6, dims)).unwrap();
        let z = m.noise(&mut rng, 5);
        let (_, g, _) = m.generator_loss_grad(&z, &data).unwrap();
        let e = grad_error(
            &g,
            |p| {
                let mut mm = m.clone();
                mm.generator.set_params(p).unwrap();
                gansd_generator_loss(&mm.soft_outputs(&z).unwrap(), &data, &mm.discriminator, cfg.alpha, cfg.beta).unwrap()
            },
            m.generator.params(),
        );
        track("generator", e);

        let fake = m.soft_outputs(&m.noise(&mut rng, 4)).unwrap();
        let real: Vec<f64> = random_profiles(&mut rng, 5, dims).iter().flat_map(|p| p.encode()).collect();
        let (_, g) = discriminator_loss_grad(&real, &fake, &m.discriminator).unwrap();
        let e = grad_error(
            &g,
            |p| {
                let mut d: Mlp = m.discriminator.clone();
                d.set_params(p).unwrap();
                gansd_discriminator_loss(&real, &fake, &d).unwrap()
            },
            m.discriminator.params(),
        );
        track("customer discriminator", e);

        let mut md = MailDiscriminator::new(dims, &small_net(), &mut rng).unwrap();
        jitter(md.net.params_mut(), &mut rng);
        let pairs = |n: usize, rng: &mut SimRng| {
            let mut out = Vec::new();
            for p in random_profiles(rng, n, dims) {
                let s = CustomerState {
                    profile: p,
                    action: EngineAction((0..dims.action_dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
                    page: PageIndex(rng.random_range(0..=dims.max_index)),
                };
                encode_pair(&s, CustomerAction::from_index(rng.random_range(0..3)), dims.max_index, &mut out);
            }
            out
        };
        let (gen, exp) = (pairs(4, &mut rng), pairs(5, &mut rng));
        let (_, g) = discriminator_loss_grad(&gen, &exp, &md.net).unwrap();
        let e = grad_error(
            &g,
            |p| {
                let mut d = md.clone();
                d.net.set_params(p).unwrap();
                mail_discriminator_loss(&d, &gen, &exp).unwrap()
            },
            md.net.params(),
        );
        track("imitation discriminator", e);

        let (od, ad, rows) = (7, 3, 6);
        let obs: Vec<f64> = (0..rows * od).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut gp = GaussianPolicy::new(od, ad, &small_net(), 0.5, &mut rng).unwrap();
        let mut p = gp.params();
        jitter(&mut p, &mut rng);
        gp.set_params(&p).unwrap();
        let gb = GaussianBatch {
            obs: obs.clone(),
            actions: (0..rows * ad).map(|_| rng.random_range(-1.0..1.0)).collect(),
            rows,
        };
        let e = grad_error(
            &gp.logprob_grad(&gb, &w).unwrap(),
            |x| {
                let mut q = gp.clone();
                q.set_params(x).unwrap();
                q.log_probs(&gb).unwrap().iter().zip(&w).map(|(l, w)| l * w).sum()
            },
            &gp.params(),
        );
        track("gaussian policy", e);

        let mut cp = CategoricalPolicy::new(od, 3, &small_net(), &mut rng).unwrap();
        let mut p = cp.params();
        jitter(&mut p, &mut rng);
        cp.set_params(&p).unwrap();
        let cb = CategoricalBatch {
            obs: obs.clone(),
            actions: (0..rows).map(|_| rng.random_range(0..3)).collect(),
        };
        let e = grad_error(
            &cp.logprob_grad(&cb, &w).unwrap(),
            |x| {
                let mut q = cp.clone();
                q.set_params(x).unwrap();
                q.log_probs(&cb).unwrap().iter().zip(&w).map(|(l, w)| l * w).sum()
            },
            &cp.params(),
        );
        track("categorical policy", e);

        let mut vn = ValueNet::new(od, &small_net(), &mut rng).unwrap();
        jitter(vn.net.params_mut(), &mut rng);
        let (_, g) = vn.loss_grad(&obs, &w).unwrap();
        let e = grad_error(
            &g,
            |x| {
                let mut q = vn.clone();
                q.net.set_params(x).unwrap();
                q.loss_grad(&obs, &w).unwrap().0
            },
            vn.net.params(),
        );
        track("value net", e);
    }
    let elapsed = t.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(
        1,
        "gradient fidelity",
        max < GRAD_REL_TOL && elapsed < GRAD_BUDGET,
        format!("{GRAD_INSTANCES} instances per class; worst {detail}; {:.1}s", elapsed.as_secs_f64()),
    )
}

/// Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn criterion_2() -> Verdict {
    let mut rng = stream(102, Domain::Init, 0);
    let cfg = TrpoConfig::default();
    let (od, ad, rows) = (3, 2, 64);
    let mut p = GaussianPolicy::new(od, ad, &small_net(), 0.5, &mut rng).unwrap();
    let (mut accepted, mut worst_kl) = (0, 0.0f64);
    let mut improvement_ok = true;
    for _ in 0..TRPO_FUZZ_STEPS {
        let b = GaussianBatch {
            obs: (0..rows * od).map(|_| rng.random_range(-1.0..1.0)).collect(),
            actions: (0..rows * ad).map(|_| rng.random_range(-1.0..1.0)).collect(),
            rows,
        };
        let adv: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = trpo_step(&mut p, &b, &adv, &cfg).unwrap();
        if d.accepted {
            accepted += 1;
            worst_kl = worst_kl.max(d.kl);
            improvement_ok &= d.surrogate_improvement >= 0.0;
        }
    }
    let kl_ok = worst_kl <= KL_SLACK * cfg.max_kl;

    let n = 20;
    let mut worst_cg = 0.0f64;
    for _ in 0..CG_SYSTEMS {
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| m[i][k] * m[j][k]).sum::<f64>() + if i == j { n as f64 } else { 0.0 })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact = dense_solve(a.clone(), b.clone());
        let x = conjugate_gradient(|v| Ok(a.iter().map(|row| row.iter().zip(v).map(|(r, v)| r * v).sum()).collect()), &b, 100, 1e-20)
            .unwrap();
        let num: f64 = x.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_cg = worst_cg.max(num / den);
    }
    verdict(
        2,
        "trust-region contract",
        kl_ok && improvement_ok && accepted > 0 && worst_cg < CG_REL_TOL,
        format!(
            "{accepted}/{TRPO_FUZZ_STEPS} steps accepted, max KL {worst_kl:.5} (limit {:.3}); CG worst relative error {worst_cg:.1e} on {CG_SYSTEMS} systems",
            KL_SLACK * cfg.max_kl
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut cases = 0;
    let mut bad = Vec::new();
    for r in [-1.5, 0.0, 0.3, 1.0, 2.0] {
        for rho in [0.0, 0.5, 1.0, 4.0] {
            for mu in [0.0, 0.01, 0.5, 2.0] {
                let cfg = AncConfig { rho, mu };
                for norm in [0.0, 0.004, mu, 0.25, 1.0, 3.0] {
                    let expected = if norm <= mu { r } else { r / (1.0 + rho * (norm - mu)) };
                    cases += 1;
                    if anc_shape_norm(r, norm, &cfg) != expected {
                        bad.push(format!("r={r} rho={rho} mu={mu} norm={norm}"));
                    }
                    if norm > 0.0 {
                        // A two-component action with this exact norm.
                        let a = EngineAction(vec![0.6 * norm, 0.8 * norm]);
                        let n = (a.0[0] * a.0[0] + a.0[1] * a.0[1]).sqrt();
                        let e = if n <= mu { r } else { r / (1.0 + rho * (n - mu)) };
                        cases += 1;
                        if anc_shape(r, &a, &cfg) != e {
                            bad.push(format!("vector r={r} rho={rho} mu={mu} norm={n}"));
                        }
                    }
                }
                let at = anc_shape(r, &EngineAction(vec![mu]), &cfg);
                cases += 1;
                if at != r {
                    bad.push(format!("threshold r={r} rho={rho} mu={mu}"));
                }
            }
        }
    }
    verdict(
        3,
        "action-norm shaping formula",
        bad.is_empty(),
        if bad.is_empty() { format!("{cases} grid points exact, threshold unshaped") } else { format!("mismatch at {}", bad.join("; ")) },
    )
}

fn bimodal(n: usize) -> Vec<CustomerProfile> {
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                CustomerProfile::from_type(1, vec![1.0, 0.0, 0.0, 0.0])
            } else {
                CustomerProfile::from_type(40, vec![0.0, 0.0, 1.0, 0.0])
            }
        })
        .collect()
}

fn mode_stats(cfg: &GansdConfig, data: &[CustomerProfile]) -> (f64, f64, f64) {
    let (m, _) = train_gansd_on(data, cfg, MarketDims::default(), 6).unwrap();
    let s = sample_customers(&m, MODE_SAMPLES, 3, 1);
    let freq = |t: usize| s.iter().filter(|p| p.type_index() == t).count() as f64 / s.len() as f64;
    (freq(1), freq(40), joint_type_entropy(&s))
}

fn criterion_4() -> Verdict {
    let t = Instant::now();
    let data = bimodal(4000);
    let data_h = joint_type_entropy(&data);
    let (a, b, h) = mode_stats(&GansdConfig::default(), &data);
    let ablation = GansdConfig {
        alpha: 0.0,
        beta: 0.0,
        ..GansdConfig::default()
    };
    let (a0, b0, h0) = mode_stats(&ablation, &data);
    let elapsed = t.elapsed();
    verdict(
        4,
        "generator keeps both modes",
        a >= MODE_MIN_FREQ && b >= MODE_MIN_FREQ && h >= ENTROPY_RATIO * data_h && elapsed < GANSD_BUDGET,
        format!(
            "modes {a:.3}/{b:.3}, entropy {h:.3} of {data_h:.3}; without regularizers modes {a0:.3}/{b0:.3}, entropy {h0:.3}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn vtlab(out: &Path, args: &[&str]) -> (bool, Vec<String>) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_vtlab"))
        .args(args)
        .env("VTLAB_OUT", out)
        .current_dir(out)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = Vec::new();
    for line in BufReader::new(child.stderr.take().unwrap()).lines() {
        let line = line.unwrap();
        eprintln!("  | {line}");
        lines.push(line);
    }
    (child.wait().unwrap().success(), lines)
}

fn scratch(name: &str) -> PathBuf {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    if p.exists() {
        fs::remove_dir_all(&p).unwrap();
    }
    fs::create_dir_all(&p).unwrap();
    p
}

/// Seconds reported by the last progress note of `stage` whose text contains `needle`.
fn stage_seconds(lines: &[String], stage: &str, needle: &str) -> Option<f64> {
    let tag = format!("[{stage}]");
    lines
        .iter()
        .filter(|l| l.starts_with(&tag) && l.contains(needle))
        .next_back()
        .and_then(|l| l.rsplit_once('(')?.1.strip_suffix("s)")?.parse().ok())
}

fn load<T: serde::de::DeserializeOwned>(run: &Path, experiment: &str) -> Option<T> {
    let text = fs::read_to_string(run.join("reports").join(format!("{experiment}.json"))).ok()?;
    let r = ExperimentReport::from_json(&text).ok()?;
    serde_json::from_value(r.results).ok()
}

fn missing(id: u8, name: &'static str) -> Verdict {
    verdict(id, name, false, "report missing".into())
}

fn full_scale() -> Vec<Verdict> {
    let out = scratch("acceptance-full");
    let t = Instant::now();
    let (ok, lines) = vtlab(&out, &["run-all", "--seed", "1", "--run-id", "full"]);
    let wall = t.elapsed();
    let run = out.join("full");
    let mut v = Vec::new();

    v.push(match load::<DistributionMatch>(&run, vtlab_bench::FIG3) {
        Some(d) => verdict(5, "customer distribution match", d.max_tv() <= MAX_TV, format!("max per-feature TV {:.4} (limit {MAX_TV})", d.max_tv())),
        None => missing(5, "customer distribution match"),
    });

    let fidelity_secs: Option<f64> = (|| {
        Some(
            stage_seconds(&lines, "gen-data", "")?
                + stage_seconds(&lines, "fit-gansd", "")?
                + stage_seconds(&lines, "fit-mail", "")?
                + stage_seconds(&lines, "eval", vtlab_bench::FIG4)?,
        )
    })();
    v.push(match load::<R2pFidelity>(&run, vtlab_bench::FIG4) {
        Some(f) => {
            let corr = f.correlation.unwrap_or(f64::NAN);
            let secs = fidelity_secs.unwrap_or(f64::INFINITY);
            verdict(
                6,
                "environment fidelity",
                f.relative_gap.abs() <= MAX_GAP && corr >= MIN_FEATURE_CORR && secs < FIDELITY_BUDGET.as_secs_f64(),
                format!(
                    "gap {:.4} (limit {MAX_GAP}), correlation {corr:.3} (need {MIN_FEATURE_CORR}), {secs:.0}s from logging to report",
                    f.relative_gap
                ),
            )
        }
        None => missing(6, "environment fidelity"),
    });

    v.push(match load::<R2pOverTime>(&run, vtlab_bench::FIG5) {
        Some(r) => {
            let corr = r.correlation.unwrap_or(f64::NAN);
            verdict(7, "R2P over time", corr >= MIN_TIME_CORR, format!("correlation {corr:.3} over {} slots (need {MIN_TIME_CORR})", r.slots.len()))
        }
        None => missing(7, "R2P over time"),
    });

    v.push(match load::<AncComparison>(&run, vtlab_bench::FIG6) {
        Some(a) => verdict(
            8,
            "action-norm constraint effect",
            a.rows.len() >= 5 && a.r2p_wins >= MIN_WINS && a.gap_wins >= MIN_WINS,
            format!("R2P wins {}/{n}, gap wins {}/{n} (need {MIN_WINS})", a.r2p_wins, a.gap_wins, n = a.rows.len()),
        ),
        None => missing(8, "action-norm constraint effect"),
    });

    v.push(match load::<Generalization>(&run, vtlab_bench::GEN_TABLE) {
        Some(g) => criterion_9(&g),
        None => missing(9, "generalization under drift"),
    });

    v.push(match load::<RlVsSl>(&run, vtlab_bench::FIG7) {
        Some(r) => {
            let ordered = r.rows.iter().filter(|x| x.sl1.r2p <= x.sl2.r2p && x.sl2.r2p <= x.rl.r2p).count();
            verdict(
                10,
                "reinforcement over supervised",
                r.rows.len() >= 5 && ordered >= MIN_WINS && r.rl_improvement > 0.0,
                format!("ordered in {ordered}/{} seeds (need {MIN_WINS}), improvement {:+.4}", r.rows.len(), r.rl_improvement),
            )
        }
        None => missing(10, "reinforcement over supervised"),
    });

    v.push(verdict(
        12,
        "end-to-end budget",
        ok && wall < RUN_BUDGET,
        format!("run-all {} in {:.1} min (limit {} min)", if ok { "finished" } else { "failed" }, wall.as_secs_f64() / 60.0, RUN_BUDGET.as_secs() / 60),
    ));
    v
}

fn criterion_9(g: &Generalization) -> Verdict {
    let seeds = g.seeds();
    let n = seeds.len();
    let majority = n / 2 + 1;
    let nonzero: Vec<f64> = g.levels.iter().copied().filter(|&l| l > 0.0).collect();
    let row = |s: u64, l: f64| g.rows.iter().find(|r| r.seed == s && r.level == l);
    let holds = seeds
        .iter()
        .filter(|&&s| nonzero.iter().all(|&l| row(s, l).is_some_and(|r| r.mail >= r.random)))
        .count();
    let (lo, hi) = (nonzero.first().copied().unwrap_or(0.0), nonzero.last().copied().unwrap_or(0.0));
    let mean = |f: &dyn Fn(u64) -> Option<f64>| seeds.iter().filter_map(|&s| f(s)).sum::<f64>() / n.max(1) as f64;
    // decay of the relative gain over random between the lowest and highest drift
    let gain = |x: f64, r: f64| x / r - 1.0;
    let mail_decay = mean(&|s| Some(gain(row(s, lo)?.mail, row(s, lo)?.random) - gain(row(s, hi)?.mail, row(s, hi)?.random)));
    let bc_decay = mean(&|s| Some(gain(row(s, lo)?.bc, row(s, lo)?.random) - gain(row(s, hi)?.bc, row(s, hi)?.random)));
    let below = seeds.iter().filter(|&&s| row(s, hi).is_some_and(|r| r.bc < r.random)).count();
    let core = n >= 5 && holds >= majority && bc_decay >= mail_decay;
    let last = below >= majority;
    verdict(
        9,
        "generalization under drift",
        core,
        format!(
            "imitation-env policy at or above random in {holds}/{n} seeds; mean decay bc {bc_decay:.5} vs imitation {mail_decay:.5}; bc below random at drift {hi} in {below}/{n}{}",
            if last { "" } else { " (deviation: last clause not met)" }
        ),
    )
}

fn criterion_11() -> Verdict {
    let out = scratch("acceptance-determinism");
    fs::write(out.join("reduced.toml"), REDUCED).unwrap();
    let mut ok = true;
    for id in ["first", "second"] {
        ok &= vtlab(&out, &["run-all", "--config", "reduced.toml", "--seed", "7", "--threads", "1", "--run-id", id]).0;
    }
    if !ok {
        return verdict(11, "determinism", false, "a reduced-scale run failed".into());
    }
    let list = |id: &str| {
        let mut v: Vec<PathBuf> = fs::read_dir(out.join(id).join("reports")).unwrap().map(|e| e.unwrap().path()).collect();
        v.sort();
        v
    };
    let (a, b) = (list("first"), list("second"));
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    let mut differing: Vec<String> = Vec::new();
    if names(&a) != names(&b) {
        differing.push("file sets".into());
    }
    for (x, y) in a.iter().zip(&b) {
        if fs::read(x).unwrap() != fs::read(y).unwrap() {
            differing.push(x.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    verdict(
        11,
        "determinism",
        differing.is_empty() && !a.is_empty(),
        if differing.is_empty() { format!("{} report files byte-identical across two runs", a.len()) } else { format!("differs: {}", differing.join(", ")) },
    )
}

fn main() {
    // Optional criterion numbers restrict the run; no arguments runs everything.
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |ids: &[u8]| only.is_empty() || ids.iter().any(|i| only.contains(i));
    let mut all = Vec::new();
    let library: [(u8, fn() -> Verdict); 4] = [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4)];
    for (id, f) in library {
        if want(&[id]) {
            all.push(f());
        }
    }
    if want(&[5, 6, 7, 8, 9, 10, 12]) {
        all.extend(full_scale());
    }
    if want(&[11]) {
        all.push(criterion_11());
    }
    all.sort_by_key(|v| v.id);
    println!();
    for v in &all {
        println!("{} {:>2} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
    }
    let failed = all.iter().filter(|v| !v.passed).count();
    println!("\n{} of {} criteria passed", all.len() - failed, all.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
