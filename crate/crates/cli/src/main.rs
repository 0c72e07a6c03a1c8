use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlra_hjb_cli::{commands, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "dlra-hjb", version, about = "Tensor-train feedback synthesis for finite-horizon control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the value function and write a checkpoint with diagnostics.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output.dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpointed feedback law against LQR and open-loop control.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve and evaluate several configs and tabulate time and mean cost.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Solve { config, out } => {
            let config = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| config.output.dir.clone());
            let outcome = commands::solve(&config, &out)?;
            println!("checkpoint {} ({:.2} s)", outcome.checkpoint.display(), outcome.seconds);
        }
        Command::Evaluate { checkpoint, config, out } => {
            let config = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| config.output.dir.clone());
            let report = commands::evaluate(&checkpoint, &config, &out)?;
            for a in &report.aggregates {
                println!("{} mean_cost={:.6} count={}", a.method, a.mean_cost, a.count);
            }
        }
        Command::Compare { configs, out } => {
            let rows = commands::compare(&configs, &out)?;
            println!("{} rows written to {}", rows.len(), out.join(commands::TABLE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
