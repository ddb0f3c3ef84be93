use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fastexit::harness::config::{ExperimentConfig, ExperimentKind};
use fastexit::harness::runs::{emit_plot_data, run};
use fastexit::Error;

#[derive(Parser)]
#[command(name = "fastexit", version, about = "Fast-transport SPDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; for `emit-plots`, the results directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "FASTEXIT_THREADS")]
    threads: Option<usize>,
    /// Monte Carlo paths per level.
    #[arg(long, global = true)]
    paths: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run the hypothesis probes required by the config's experiment kind.
    Check,
    Simulate,
    Average,
    Action,
    Quasipotential,
    Exit,
    /// Reshape results into plot-ready CSVs.
    EmitPlots,
}

fn load(cli: &Cli) -> fastexit::Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::InvalidArgument("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(p) = cli.paths {
        cfg.paths = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> fastexit::Result<()> {
    let kind = match cli.command {
        Command::EmitPlots => {
            let dir = match (&cli.out, &cli.config) {
                (Some(o), _) => o.clone(),
                (None, Some(_)) => load(cli)?.out,
                (None, None) => return Err(Error::InvalidArgument("emit-plots needs --out or --config".into())),
            };
            for p in emit_plot_data(&dir)? {
                println!("{}", p.display());
            }
            return Ok(());
        }
        Command::Check => None,
        Command::Simulate => Some(ExperimentKind::Simulate),
        Command::Average => Some(ExperimentKind::Average),
        Command::Action => Some(ExperimentKind::Action),
        Command::Quasipotential => Some(ExperimentKind::Quasipotential),
        Command::Exit => Some(ExperimentKind::Exit),
    };
    let mut cfg = load(cli)?;
    // `check` probes whatever the config asks for; other commands run as themselves.
    if let Some(k) = kind {
        cfg.kind = k;
        cfg.validate()?;
    }
    let out = run(&cfg, kind.unwrap_or(ExperimentKind::Check))?;
    println!("{}", out.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::HypothesisFailed(_) => 2,
                Error::Diverged { .. } => 3,
                _ => 1,
            })
        }
    }
}
