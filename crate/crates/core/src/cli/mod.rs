//! Configuration-driven front end: `run`, `profile` and `check`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 verification failure.

pub mod check;
pub mod config;
pub mod io;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::profiles::{accuracy_profile, default_accuracy_grid, rmse_profile, ProfileCurve, RMSE_TAU_F};
use crate::twin::run_ensemble;
use config::ExperimentConfig;
use io::RunMetadata;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

/// Files written by [`cmd_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub results: PathBuf,
    pub metadata: PathBuf,
    pub rows: usize,
}

/// Runs the ensemble described by `config` and writes
/// `<prefix>_results.csv` and `<prefix>_meta.json`. `out` and `workers`
/// override the file's output directory and worker count; the worker
/// count does not affect the results.
pub fn cmd_run(config: &ExperimentConfig, out: Option<&Path>, workers: Option<usize>) -> Result<RunOutput, CliError> {
    let mut resolved = config.resolved()?;
    if let Some(w) = workers {
        resolved.ensemble.workers = w;
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&resolved.output.directory));
    let twin = resolved.twin_config()?;
    let rows = run_ensemble(&twin).map_err(|e| CliError::Runtime(e.to_string()))?;

    let results = dir.join(format!("{}_results.csv", resolved.output.prefix));
    let metadata = dir.join(format!("{}_meta.json", resolved.output.prefix));
    let mut w = create(&results)?;
    io::write_results(&mut w, &rows)?;
    w.flush().map_err(|e| io_error(&results, e))?;
    // the worker count is an execution detail; keep metadata independent of it
    resolved.ensemble.workers = config.ensemble.workers;
    let mut m = create(&metadata)?;
    m.write_all(RunMetadata::new(resolved, rows.len()).to_json().as_bytes())
        .and_then(|_| m.flush())
        .map_err(|e| io_error(&metadata, e))?;
    Ok(RunOutput { results, metadata, rows: rows.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Accuracy,
    Rmse,
}

impl std::str::FromStr for ProfileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(ProfileKind::Accuracy),
            "rmse" => Ok(ProfileKind::Rmse),
            other => Err(format!("unknown profile kind `{other}` (accuracy | rmse)")),
        }
    }
}

/// Profile of a results CSV, written next to it (or into `out`) as
/// `<prefix>_profile.csv` for accuracy and `<prefix>_rmse_profile.csv` for
/// RMSE profiles.
pub fn cmd_profile(
    results: &Path,
    kind: ProfileKind,
    tau_f: Option<f64>,
    out: Option<&Path>,
) -> Result<(PathBuf, ProfileCurve), CliError> {
    let file = File::open(results).map_err(|e| io_error(results, e))?;
    let table = io::read_results(BufReader::new(file))?;
    let curve = match kind {
        ProfileKind::Accuracy => {
            if tau_f.is_some() {
                return Err(CliError::Config("--tau-f applies to rmse profiles only".into()));
            }
            accuracy_profile(&table, &default_accuracy_grid())
        }
        ProfileKind::Rmse => rmse_profile(&table, tau_f.unwrap_or(RMSE_TAU_F), None),
    }
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    let stem = results.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let prefix = stem.strip_suffix("_results").unwrap_or(stem);
    let suffix = match kind {
        ProfileKind::Accuracy => "profile",
        ProfileKind::Rmse => "rmse_profile",
    };
    let dir = out.map(Path::to_path_buf).or_else(|| results.parent().map(Path::to_path_buf)).unwrap_or_default();
    let path = dir.join(format!("{prefix}_{suffix}.csv"));
    let mut w = create(&path)?;
    io::write_profile(&mut w, &curve)?;
    w.flush().map_err(|e| io_error(&path, e))?;
    Ok((path, curve))
}

/// Number of realizations the derivative checks sample.
pub const CHECK_PROBLEMS: usize = 20;

/// Runs the verification suite; an error lists the failed checks.
pub fn cmd_check(config: &ExperimentConfig) -> Result<Vec<check::CheckOutcome>, CliError> {
    let twin = config.twin_config()?;
    let outcomes = check::run_checks(&twin, CHECK_PROBLEMS.min(twin.n_r.max(1)));
    Ok(outcomes)
}
