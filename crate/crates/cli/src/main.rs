use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wncs_cli::commands::{self, Outputs};
use wncs_cli::config::ExperimentConfig;
use wncs_cli::CliError;

/// Design and verification toolkit for energy-efficient transmission
/// policies in wireless networked control systems.
#[derive(Parser)]
#[command(name = "wncs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a decay certificate against the loop (matrix inequalities
    /// plus sampling falsification).
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Tabulate required success probabilities and minimal powers/gains.
    Feasible {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Minimize average communication power in one of the structured modes.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// pure-channel | pure-time | eps-loss | unsaturated | general
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the deterministic Monte-Carlo closed-loop simulator.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Emit the data series behind the study figures (3-8).
    Reproduce {
        #[arg(long)]
        figure: u32,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Certify { config, out, seed } => {
            let cfg = load(&config)?;
            let mut outputs = Outputs::new(&out)?;
            commands::cmd_certify(&cfg, &mut outputs, seed)
        }
        Command::Feasible { config, out } => {
            let cfg = load(&config)?;
            let mut outputs = Outputs::new(&out)?;
            commands::cmd_feasible(&cfg, &mut outputs)
        }
        Command::Optimize { config, mode, out } => {
            let cfg = load(&config)?;
            let mut outputs = Outputs::new(&out)?;
            commands::cmd_optimize(&cfg, mode.as_deref(), &mut outputs)
        }
        Command::Simulate { config, out, seed, trials, horizon } => {
            let cfg = load(&config)?;
            let mut outputs = Outputs::new(&out)?;
            commands::cmd_simulate(&cfg, &mut outputs, seed, trials, horizon)
        }
        Command::Reproduce { figure, out, seed, trials, horizon } => {
            let mut outputs = Outputs::new(&out)?;
            commands::cmd_reproduce(figure, &mut outputs, seed, trials, horizon)
        }
    }
}

fn main() -> ExitCode {
    // Cap worker parallelism when requested; results do not depend on it.
    if let Ok(threads) = std::env::var("WNCS_THREADS") {
        if let Ok(k) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
