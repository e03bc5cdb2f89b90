use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vtlab_cli::commands;
use vtlab_cli::run::{fresh_run_id, write_atomic, SNAPSHOT};
use vtlab_cli::{CliError, RunConfig, RunDir};

#[derive(Parser)]
#[command(name = "vtlab", version, about = "Learn a virtual marketplace from logs and train platform policies in it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; omitted keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Logged sessions generated by gen-data.
    #[arg(long, global = true)]
    sessions: Option<usize>,
    /// Drift level of the logged marketplace, in [0, 1].
    #[arg(long, global = true)]
    drift_level: Option<f64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output root directory.
    #[arg(long, global = true, env = "VTLAB_OUT")]
    out: Option<PathBuf>,
    /// Existing or new run directory name under the output root.
    #[arg(long, global = true)]
    run_id: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Log sessions from the ground-truth marketplace under the uniform policy.
    GenData(CommonArg),
    /// Fit the customer generator.
    FitGansd(CommonArg),
    /// Fit the customer policy by adversarial imitation.
    FitMail(CommonArg),
    /// Fit the behavior-cloned customer policy.
    FitBc(CommonArg),
    /// Train platform policies in the virtual environments.
    TrainRl(CommonArg),
    /// Fit the supervised platform policies on the logs.
    TrainSl(CommonArg),
    /// Run the experiments and write their reports.
    Eval(EvalArgs),
    /// Check report consistency and summarize every acceptance check.
    Report(CommonArg),
    /// Execute the whole chain from gen-data to report.
    RunAll(CommonArg),
}

#[derive(Args)]
struct CommonArg {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated subset of experiments.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
}

/// Effective configuration: snapshot or file or defaults, then flags.
fn resolve(c: &Common, fresh: bool) -> Result<(RunConfig, RunDir), CliError> {
    let file_cfg = match &c.config {
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let mut cfg = file_cfg.clone().unwrap_or_default();
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out));
    let run_id = match &c.run_id {
        Some(id) => id.clone(),
        None => fresh_run_id(&out, cfg.seed),
    };
    let root = out.join(&run_id);
    let snapshot_path = root.join(SNAPSHOT);
    let snapshot = if snapshot_path.is_file() && !fresh {
        Some(RunConfig::load(&snapshot_path)?)
    } else {
        None
    };
    if let (Some(snap), None) = (&snapshot, &file_cfg) {
        cfg = snap.clone();
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
    }
    if let Some(n) = c.sessions {
        cfg.oracle.sessions = n;
    }
    if let Some(d) = c.drift_level {
        cfg.oracle.drift_level = d;
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    cfg.out = out.display().to_string();
    cfg.validate()?;
    if let Some(snap) = &snapshot {
        if snap.science_hash() != cfg.science_hash() {
            return Err(CliError::Config(vec![format!(
                "effective configuration differs from {}",
                snapshot_path.display()
            )]));
        }
    }
    if fresh && snapshot_path.exists() {
        return Err(CliError::OutputExists(snapshot_path));
    }
    let run = RunDir::create(root)?;
    if !snapshot_path.exists() {
        write_atomic(&snapshot_path, cfg.to_toml().as_bytes())?;
        if RunConfig::load(&snapshot_path)? != cfg {
            return Err(CliError::Config(vec!["config snapshot does not reload to the effective configuration".into()]));
        }
    }
    eprintln!("run directory {}", run.root.display());
    Ok((cfg, run))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => {
            let (cfg, run) = resolve(&a.common, false)?;
            commands::gen_data(&cfg, &run)
        }
        Command::FitGansd(a) => {
            let (cfg, run) = resolve(&a.common, false)?;
            commands::fit_gansd(&cfg, &run)
        }
        Command::FitMail(a) => {
            let (cfg, run) = resolve(&a.common, false)?;
            commands::fit_mail(&cfg, &run)
        }
        Command::FitBc(a) => {
            let (cfg, run) = resolve(&a.common, false)?;
            commands::fit_bc(&cfg, &run)
        }
        Command::TrainRl(a) => {
            let (cfg, run) = resolve(&a.common, false)?;
            commands::train_rl(&cfg, &run)
        }
        Command::TrainSl(a) => {
            let (cfg, run) = resolve(&a.common, false)?;
            commands::train_sl_cmd(&cfg, &run)
        }
        Command::Eval(a) => {
            let (cfg, run) = resolve(&a.common, false)?;
            commands::eval(&cfg, &run, &a.only)
        }
        Command::Report(a) => {
            let (_, run) = resolve(&a.common, false)?;
            commands::report(&run).map(|_| ())
        }
        Command::RunAll(a) => {
            let (cfg, run) = resolve(&a.common, true)?;
            commands::run_all(&cfg, &run).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {line}", e.kind());
            ExitCode::FAILURE
        }
    }
}
