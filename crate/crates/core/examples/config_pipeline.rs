//! The `run` then `profile` pipeline driven by a TOML file, as the
//! `fourdvar` binary does it. Output goes to a temporary directory unless a
//! second argument names one.
//!
//!     cargo run --release --example config_pipeline -- configs/lorenz63_window_0p1.toml out

use std::path::PathBuf;

use fourdvar::cli::config::ExperimentConfig;
use fourdvar::cli::{cmd_profile, cmd_run, ProfileKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::from_toml_str("[ensemble]\nn_r = 20\n[output]\nprefix = \"demo\"\n")?,
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fourdvar-demo"));

    let resolved = config.resolved()?;
    println!("model {:?}, window {}, {} realizations", resolved.model.kind, resolved.window.t_a, resolved.ensemble.n_r);

    let run = cmd_run(&config, Some(&out), None)?;
    println!("{} rows -> {}", run.rows, run.results.display());
    for kind in [ProfileKind::Accuracy, ProfileKind::Rmse] {
        let (path, curve) = cmd_profile(&run.results, kind, None, None)?;
        println!("{kind:?} profile: {} points -> {}", curve.x.len(), path.display());
    }

    // the metadata file replays the run
    let again = cmd_run(&ExperimentConfig::load(&run.metadata)?, Some(&out.join("replay")), Some(1))?;
    let same = std::fs::read(&run.results)? == std::fs::read(&again.results)?;
    println!("replay identical: {same}");
    Ok(())
}
