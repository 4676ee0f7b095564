use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fnqs::runner::{self, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "fnqs", version, about = "Train and probe coupling-conditioned transformer wavefunctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured ensemble, resuming from an existing checkpoint.
    Train(RunArgs),
    /// Estimate observables of a trained checkpoint at the `[evaluate]` points.
    Evaluate(RunArgs),
    /// Fidelity-susceptibility vector field over the `[chi_sweep]` points.
    ChiSweep(RunArgs),
    /// Exact baselines for the configured couplings.
    Oracle(RunArgs),
    /// Cross-check the exact solvers against each other.
    Verify {
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for amplitude evaluation (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn set_workers(workers: Option<usize>) -> Result<()> {
    if let Some(w) = workers {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn load(args: &RunArgs, mode: Mode) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    cfg.mode = mode;
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let (args, mode) = match cli.command {
        Command::Verify { workers } => {
            set_workers(workers)?;
            let checks = runner::verify()?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Train(a) => (a, Mode::Train),
        Command::Evaluate(a) => (a, Mode::Evaluate),
        Command::ChiSweep(a) => (a, Mode::ChiSweep),
        Command::Oracle(a) => (a, Mode::Oracle),
    };
    set_workers(args.workers)?;
    let cfg = load(&args, mode)?;
    let summary = runner::run(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}
