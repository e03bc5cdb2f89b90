use std::time::Instant;

use vtlab_bench::{
    bench_seeds, exp_anc, exp_distribution_match, exp_generalization, exp_r2p_fidelity, exp_r2p_over_time,
    exp_rl_vs_sl, AncArm, ExperimentReport, GeneralizationArm, ReportSet, RlSlArm, SlotPipeline, ALL_EXPERIMENTS, FIG3,
    FIG4, FIG5, FIG6, FIG7, GEN_TABLE,
};
use vtlab_core::baselines::{train_bc, train_sl, SlVariant};
use vtlab_core::gansd::{curve_csv, train_gansd, GansdModel};
use vtlab_core::mail::{build_virtual_env, mail_curve_csv, train_mail, warm_start, CustomerNet, JointPolicy, VirtualEnvironment};
use vtlab_core::market::{Dataset, DatasetMeta, EmpiricalSampler};
use vtlab_core::nn::ModelCheckpoint;
use vtlab_core::oracle::{drift, generate_log, DriftSchedule, OracleMarket, OracleParams};
use vtlab_core::policy::{learning_curve_csv, train_engine_policy, CategoricalPolicy, EngineNet, GaussianPolicy};
use vtlab_core::rng::{derive_seed, stream, Domain};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run::{RunDir, BC, GANSD, LOG, MAIL, ORACLE};

/// Virtual environment a platform policy is trained in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Mail,
    Bc,
}

/// A trained platform policy family: environment and reward shaping.
#[derive(Debug, Clone, Copy)]
pub struct RlArm {
    pub name: &'static str,
    pub env: EnvKind,
    pub anc: bool,
}

pub const RL_ARMS: [RlArm; 3] = [
    RlArm {
        name: "mail_trpo",
        env: EnvKind::Mail,
        anc: false,
    },
    RlArm {
        name: "mail_anc",
        env: EnvKind::Mail,
        anc: true,
    },
    RlArm {
        name: "bc_anc",
        env: EnvKind::Bc,
        anc: true,
    },
];

pub fn rl_checkpoint(arm: &str, k: usize) -> String {
    format!("checkpoints/rl_{arm}_{k}.ck")
}

pub fn sl_checkpoint(v: SlVariant, k: usize) -> String {
    let name = match v {
        SlVariant::Sl1 => "sl1",
        SlVariant::Sl2 => "sl2",
    };
    format!("checkpoints/{name}_{k}.ck")
}

fn note(stage: &str, started: Instant, what: String) {
    eprintln!("[{stage}] {what} ({:.1}s)", started.elapsed().as_secs_f64());
}

fn save_ck(run: &RunDir, rel: &str, ck: &ModelCheckpoint) -> Result<(), CliError> {
    let mut buf = Vec::new();
    ck.write_to(&mut buf).map_err(|e| CliError::io(&run.path(rel), e))?;
    run.write(rel, &buf)?;
    Ok(())
}

fn load_ck(run: &RunDir, rel: &str, producer: &'static str) -> Result<ModelCheckpoint, CliError> {
    Ok(ModelCheckpoint::load(&run.input(rel, producer)?)?)
}

pub fn load_dataset(run: &RunDir) -> Result<Dataset, CliError> {
    Ok(Dataset::load(&run.input(LOG, "gen-data")?)?)
}

pub fn load_oracle(run: &RunDir) -> Result<OracleMarket, CliError> {
    Ok(OracleMarket::new(OracleParams::load_json(&run.input(ORACLE, "gen-data")?)?)?)
}

pub fn load_gansd(cfg: &RunConfig, run: &RunDir) -> Result<GansdModel, CliError> {
    let ck = load_ck(run, GANSD, "fit-gansd")?;
    let mut m = GansdModel::new(cfg.gansd.clone(), cfg.oracle.dims, 0)?;
    m.load_checkpoint(&ck)?;
    Ok(m)
}

pub fn load_mail_customer(cfg: &RunConfig, run: &RunDir) -> Result<CustomerNet, CliError> {
    let ck = load_ck(run, MAIL, "fit-mail")?;
    let mut j = JointPolicy::new(cfg.oracle.dims, &cfg.mail.net, cfg.mail.init_std, &mut stream(0, Domain::Init, 0))?;
    j.load_checkpoint(&ck)?;
    Ok(j.customer_net())
}

pub fn load_bc(cfg: &RunConfig, run: &RunDir) -> Result<CustomerNet, CliError> {
    let ck = load_ck(run, BC, "fit-bc")?;
    let dims = cfg.oracle.dims;
    let mut policy = CategoricalPolicy::new(dims.state_dim(), 3, &cfg.bc.net, &mut stream(0, Domain::Init, 0))?;
    ck.load_mlp("customer", &mut policy.net)?;
    Ok(CustomerNet {
        policy,
        max_index: dims.max_index,
    })
}

pub fn load_engine(
    cfg: &RunConfig,
    run: &RunDir,
    rel: &str,
    producer: &'static str,
    net: &vtlab_core::nn::NetConfig,
) -> Result<EngineNet, CliError> {
    let ck = load_ck(run, rel, producer)?;
    let dims = cfg.oracle.dims;
    let mut policy = GaussianPolicy::new(dims.profile_dim(), dims.action_dim, net, 1.0, &mut stream(0, Domain::Init, 0))?;
    policy.load_from(&ck, "engine")?;
    Ok(EngineNet { policy })
}

fn engine_checkpoint(e: &EngineNet) -> Result<ModelCheckpoint, CliError> {
    let mut ck = ModelCheckpoint::new();
    e.policy.insert_into(&mut ck, "engine")?;
    Ok(ck)
}

pub fn environment(cfg: &RunConfig, run: &RunDir, kind: EnvKind) -> Result<VirtualEnvironment, CliError> {
    let customer = match kind {
        EnvKind::Mail => load_mail_customer(cfg, run)?,
        EnvKind::Bc => load_bc(cfg, run)?,
    };
    let sampler = load_gansd(cfg, run)?;
    Ok(build_virtual_env(sampler, customer, cfg.oracle.dims))
}

pub fn gen_data(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let t = Instant::now();
    let base = OracleParams::calibrated(cfg.oracle.dims);
    let params = drift(&base, cfg.oracle.drift_level, derive_seed(cfg.seed, Domain::Drift, 0))?;
    let market = OracleMarket::new(params.clone())?;
    let seed = derive_seed(cfg.seed, Domain::Session, 0);
    let meta = DatasetMeta {
        logging_policy: "uniform".into(),
        time_slice: None,
        drift_level: cfg.oracle.drift_level,
        seed,
    };
    let data = generate_log(&market, &market.logging_policy(), cfg.oracle.sessions, seed, meta, cfg.threads)?;
    run.write(ORACLE, (serde_json::to_string_pretty(&params).map_err(vtlab_core::Error::from)? + "\n").as_bytes())?;
    let mut buf = Vec::new();
    data.write_to(&mut buf)?;
    run.write(LOG, &buf)?;
    note("gen-data", t, format!("{} sessions, {} page views", data.sessions.len(), data.num_records()));
    Ok(())
}

pub fn fit_gansd(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let t = Instant::now();
    let data = load_dataset(run)?;
    run.output(GANSD)?;
    let (model, curve) = train_gansd(&data, &cfg.gansd, cfg.oracle.dims, derive_seed(cfg.seed, Domain::Training, 1))?;
    save_ck(run, GANSD, &model.to_checkpoint())?;
    run.write(&run.report("gansd_curve.csv"), curve_csv(&curve).as_bytes())?;
    note("fit-gansd", t, format!("{} iterations", curve.len()));
    Ok(())
}

pub fn fit_mail(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let t = Instant::now();
    let data = load_dataset(run)?;
    let init = if cfg.mail.warm_start {
        warm_start(cfg.oracle.dims, &cfg.mail, &load_bc(cfg, run)?, cfg.seed)?
    } else {
        None
    };
    run.output(MAIL)?;
    let sampler = EmpiricalSampler::from_dataset(&data)?;
    let seed = derive_seed(cfg.seed, Domain::Training, 2);
    let model = train_mail(&data, &sampler, cfg.oracle.dims, &cfg.mail, &cfg.trpo, init, seed)?;
    let mut ck = model.joint.to_checkpoint()?;
    ck.insert_mlp("discriminator", &model.discriminator.net);
    save_ck(run, MAIL, &ck)?;
    run.write(&run.report("mail_curve.csv"), mail_curve_csv(&model.curve).as_bytes())?;
    note("fit-mail", t, format!("{} iterations", model.curve.len()));
    Ok(())
}

pub fn fit_bc(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let t = Instant::now();
    let data = load_dataset(run)?;
    run.output(BC)?;
    let bc = train_bc(&data, cfg.oracle.dims, &cfg.bc, derive_seed(cfg.seed, Domain::Training, 3))?;
    let mut ck = ModelCheckpoint::new();
    ck.insert_mlp("customer", &bc.policy.net);
    save_ck(run, BC, &ck)?;
    note("fit-bc", t, format!("{} epochs", cfg.bc.epochs));
    Ok(())
}

pub fn train_rl(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let t = Instant::now();
    run.input(MAIL, "fit-mail")?;
    run.input(GANSD, "fit-gansd")?;
    run.input(BC, "fit-bc")?;
    let mail_env = environment(cfg, run, EnvKind::Mail)?;
    let bc_env = environment(cfg, run, EnvKind::Bc)?;
    for (k, &seed) in bench_seeds(cfg.seed, cfg.bench.seeds).iter().enumerate() {
        for (a, arm) in RL_ARMS.iter().enumerate() {
            let rel = rl_checkpoint(arm.name, k);
            run.output(&rel)?;
            let env = match arm.env {
                EnvKind::Mail => &mail_env,
                EnvKind::Bc => &bc_env,
            };
            let anc = arm.anc.then_some(&cfg.anc);
            let (engine, curve) = train_engine_policy(env, &cfg.trpo, anc, derive_seed(seed, Domain::Training, a as u64), cfg.threads)?;
            save_ck(run, &rel, &engine_checkpoint(&engine)?)?;
            run.write(&run.report(&format!("rl_{}_{k}_curve.csv", arm.name)), learning_curve_csv(&curve).as_bytes())?;
            note("train-rl", t, format!("{} seed {k}", arm.name));
        }
    }
    Ok(())
}

pub fn train_sl_cmd(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let t = Instant::now();
    let data = load_dataset(run)?;
    for (k, &seed) in bench_seeds(cfg.seed, cfg.bench.seeds).iter().enumerate() {
        for (v, variant) in [SlVariant::Sl1, SlVariant::Sl2].into_iter().enumerate() {
            let rel = sl_checkpoint(variant, k);
            run.output(&rel)?;
            let e = train_sl(&data, cfg.oracle.dims, variant, &cfg.sl, derive_seed(seed, Domain::Training, 10 + v as u64))?;
            save_ck(run, &rel, &engine_checkpoint(&e)?)?;
        }
        note("train-sl", t, format!("seed {k}"));
    }
    Ok(())
}

fn write_report(run: &RunDir, report: &ExperimentReport, csv: &str) -> Result<(), CliError> {
    run.write(&run.report(&format!("{}.json", report.experiment)), report.to_json()?.as_bytes())?;
    run.write(&run.report(&format!("{}.csv", report.experiment)), csv.as_bytes())?;
    Ok(())
}

/// Budgets for the per-slot rebuilt environments.
pub fn slot_pipeline(cfg: &RunConfig) -> SlotPipeline {
    let mut gansd = cfg.gansd.clone();
    gansd.iterations = cfg.bench.slot_gansd_iterations;
    let mut mail = cfg.mail.clone();
    mail.iterations = cfg.bench.slot_mail_iterations;
    let mut bc = cfg.bc.clone();
    bc.epochs = cfg.bench.slot_bc_epochs;
    SlotPipeline {
        sessions: cfg.bench.slot_sessions,
        eval_sessions: cfg.bench.eval_sessions,
        gansd,
        mail,
        bc,
        trpo: cfg.trpo.clone(),
    }
}

/// Run the selected experiments (all when `only` is empty).
pub fn eval(cfg: &RunConfig, run: &RunDir, only: &[String]) -> Result<(), CliError> {
    for o in only {
        if !ALL_EXPERIMENTS.contains(&o.as_str()) {
            return Err(CliError::Config(vec![format!(
                "unknown experiment `{o}` (expected one of {})",
                ALL_EXPERIMENTS.join(", ")
            )]));
        }
    }
    let want = |e: &str| only.is_empty() || only.iter().any(|o| o == e);
    let t = Instant::now();
    let hash = cfg.science_hash();
    let oracle = load_oracle(run)?;
    let seeds = bench_seeds(cfg.seed, cfg.bench.seeds);
    let b = &cfg.bench;
    let th = cfg.threads;
    let rl = |arm: &str, k: usize| load_engine(cfg, run, &rl_checkpoint(arm, k), "train-rl", &cfg.trpo.net);
    if want(FIG3) {
        let s = derive_seed(cfg.seed, Domain::Evaluation, 100);
        let r = exp_distribution_match(&load_gansd(cfg, run)?, &oracle, b.distribution_samples, s, th)?;
        write_report(run, &r.report(&hash, s)?, &r.csv())?;
        note("eval", t, format!("{FIG3}: max TV {:.4}", r.max_tv()));
    }
    if want(FIG4) {
        let s = derive_seed(cfg.seed, Domain::Evaluation, 101);
        let env = environment(cfg, run, EnvKind::Mail)?;
        let r = exp_r2p_fidelity(&env, &oracle, &oracle.logging_policy(), b.fidelity_sessions, b.min_feature_pvs, s, th)?;
        write_report(run, &r.report(&hash, s)?, &r.csv())?;
        note("eval", t, format!("{FIG4}: gap {:.4}, correlation {:?}", r.relative_gap, r.correlation));
    }
    if want(FIG5) {
        let s = derive_seed(cfg.seed, Domain::Evaluation, 102);
        let r = exp_r2p_over_time(oracle.params(), &DriftSchedule::day_slots(), &slot_pipeline(cfg), s, th)?;
        write_report(run, &r.report(&hash, s)?, &r.csv())?;
        note("eval", t, format!("{FIG5}: correlation {:?}", r.correlation));
    }
    if want(FIG6) {
        let env = environment(cfg, run, EnvKind::Mail)?;
        let plain: Vec<EngineNet> = (0..seeds.len()).map(|k| rl("mail_trpo", k)).collect::<Result<_, _>>()?;
        let anc: Vec<EngineNet> = (0..seeds.len()).map(|k| rl("mail_anc", k)).collect::<Result<_, _>>()?;
        let arms: Vec<AncArm> = (0..seeds.len())
            .map(|k| AncArm {
                seed: seeds[k],
                plain: &plain[k],
                anc: &anc[k],
            })
            .collect();
        let r = exp_anc(&arms, &env, &oracle, b.eval_sessions, th)?;
        write_report(run, &r.report(&hash)?, &r.csv())?;
        note("eval", t, format!("{FIG6}: r2p wins {}, gap wins {}", r.r2p_wins, r.gap_wins));
    }
    if want(GEN_TABLE) {
        let mail: Vec<EngineNet> = (0..seeds.len()).map(|k| rl("mail_anc", k)).collect::<Result<_, _>>()?;
        let bc: Vec<EngineNet> = (0..seeds.len()).map(|k| rl("bc_anc", k)).collect::<Result<_, _>>()?;
        let arms: Vec<GeneralizationArm> = (0..seeds.len())
            .map(|k| GeneralizationArm {
                seed: seeds[k],
                mail: &mail[k],
                bc: &bc[k],
            })
            .collect();
        let r = exp_generalization(&arms, oracle.params(), &b.drift_levels, b.eval_sessions, th)?;
        write_report(run, &r.report(&hash)?, &r.csv())?;
        note("eval", t, GEN_TABLE.to_string());
    }
    if want(FIG7) {
        let rls: Vec<EngineNet> = (0..seeds.len()).map(|k| rl("mail_anc", k)).collect::<Result<_, _>>()?;
        let sl = |v, k| load_engine(cfg, run, &sl_checkpoint(v, k), "train-sl", &cfg.sl.net);
        let sl1: Vec<EngineNet> = (0..seeds.len()).map(|k| sl(SlVariant::Sl1, k)).collect::<Result<_, _>>()?;
        let sl2: Vec<EngineNet> = (0..seeds.len()).map(|k| sl(SlVariant::Sl2, k)).collect::<Result<_, _>>()?;
        let arms: Vec<RlSlArm> = (0..seeds.len())
            .map(|k| RlSlArm {
                seed: seeds[k],
                rl: &rls[k],
                sl1: &sl1[k],
                sl2: &sl2[k],
            })
            .collect();
        let r = exp_rl_vs_sl(&arms, &oracle, b.eval_sessions, th)?;
        write_report(run, &r.report(&hash)?, &r.csv())?;
        note("eval", t, format!("{FIG7}: ordered in {} seeds", r.ordered_seeds));
    }
    Ok(())
}

/// Collect the experiment reports, refuse mixed configurations, and write
/// the summary.
pub fn report(run: &RunDir) -> Result<ReportSet, CliError> {
    let mut reports = Vec::new();
    for e in ALL_EXPERIMENTS {
        let p = run.input(&run.report(&format!("{e}.json")), "eval")?;
        let text = std::fs::read_to_string(&p).map_err(|err| CliError::io(&p, err))?;
        reports.push(ExperimentReport::from_json(&text)?);
    }
    let set = ReportSet::collect(reports)?;
    let mut md = format!("# Run summary\n\nconfig hash `{}`\n\n| experiment | check | result | detail |\n|---|---|---|---|\n", set.config_hash);
    for (e, c) in set.checks() {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        md.push_str(&format!("| {e} | {} | {verdict} | {} |\n", c.name, c.detail));
        println!("{verdict} {e}: {} ({})", c.name, c.detail);
    }
    run.write(&run.report("summary.json"), (serde_json::to_string_pretty(&set).map_err(vtlab_core::Error::from)? + "\n").as_bytes())?;
    run.write(&run.report("summary.md"), md.as_bytes())?;
    Ok(set)
}

pub fn run_all(cfg: &RunConfig, run: &RunDir) -> Result<ReportSet, CliError> {
    gen_data(cfg, run)?;
    fit_gansd(cfg, run)?;
    fit_bc(cfg, run)?;
    fit_mail(cfg, run)?;
    train_rl(cfg, run)?;
    train_sl_cmd(cfg, run)?;
    eval(cfg, run, &[])?;
    report(run)
}
