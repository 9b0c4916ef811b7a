use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tradeoff_cli::{run_with_jobs, Command, RunConfig};

#[derive(Parser)]
#[command(name = "tradeoff", version, about = "Off-policy evaluation trade-off experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration; defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    /// Use the wider sweep grids.
    #[arg(long, global = true)]
    extended: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Write the seeded MDP instances as JSON.
    GenMdp,
    /// Exact contraction, fixed point and bias of one rule.
    Analyze,
    /// Contraction, bias and root variance over the rule grid.
    Sweep,
    /// TD learning curves of the evaluation rules.
    EvalCurve,
    /// Policy iteration with sampled or exact evaluation.
    Control,
    /// Adaptive alpha-Retrace evaluation.
    Ctrace,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::GenMdp => Command::GenMdp,
            Cmd::Analyze => Command::Analyze,
            Cmd::Sweep => Command::Sweep,
            Cmd::EvalCurve => Command::EvalCurve,
            Cmd::Control => Command::Control,
            Cmd::Ctrace => Command::Ctrace,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let c = cli.common;

    let mut loaded = match RunConfig::read(c.config.as_deref()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = c.seed {
        loaded.override_seed(seed);
    }
    if c.extended {
        loaded.override_extended();
    }
    let cfg = match loaded.validate() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    match run_with_jobs(cli.command.into(), &cfg, &c.out, c.jobs.map(usize::from)) {
        Ok(report) if report.failed_seeds.is_empty() => {
            log::info!("wrote {}", report.manifest.display());
            ExitCode::SUCCESS
        }
        Ok(report) => {
            eprintln!("error: seeds {:?} failed", report.failed_seeds);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
