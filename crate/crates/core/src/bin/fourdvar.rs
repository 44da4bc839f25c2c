use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fourdvar::cli::config::ExperimentConfig;
use fourdvar::cli::{cmd_check, cmd_profile, cmd_run, CliError, ProfileKind};

#[derive(Parser)]
#[command(name = "fourdvar", version, about = "4D-Var twin experiments with GN, LS and REG solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write `<prefix>_results.csv` and `<prefix>_meta.json`.
    Run {
        /// TOML config, or a `_meta.json` from an earlier run to replay it.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.directory`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads, 0 for all cores (overrides `ensemble.workers`).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Accuracy or RMSE profile of a results CSV.
    Profile {
        results: PathBuf,
        #[arg(long, default_value = "accuracy")]
        kind: ProfileKind,
        /// Accuracy that counts as solved in RMSE profiles (default 1e-3).
        #[arg(long = "tau-f")]
        tau_f: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient, tangent-linear, conditioning and solver checks.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: Option<&PathBuf>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, workers } => {
            let cfg = load(Some(&config))?;
            let run = cmd_run(&cfg, out.as_deref(), workers)?;
            println!("{} rows -> {}", run.rows, run.results.display());
            println!("metadata -> {}", run.metadata.display());
        }
        Command::Profile { results, kind, tau_f, out } => {
            let (path, curve) = cmd_profile(&results, kind, tau_f, out.as_deref())?;
            println!(
                "{} points, {} realizations ({} excluded, {} degenerate) -> {}",
                curve.x.len(),
                curve.n_r,
                curve.excluded,
                curve.degenerate,
                path.display()
            );
        }
        Command::Check { config } => {
            let outcomes = cmd_check(&load(config.as_ref())?)?;
            for o in &outcomes {
                println!("{o}");
            }
            let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::Verification(failed.join("; ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
