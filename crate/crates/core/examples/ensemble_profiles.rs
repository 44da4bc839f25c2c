//! Runs a 100-realization ensemble at a budget of 8 evaluations and
//! prints accuracy and RMSE profiles at a few thresholds.
//!
//!     cargo run --release --example ensemble_profiles -- lorenz96

use fourdvar::profiles::{accuracy_profile, default_accuracy_grid, rmse_profile, RMSE_TAU_F};
use fourdvar::solvers::Method;
use fourdvar::twin::{run_ensemble, TwinConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = match std::env::args().nth(1).as_deref() {
        Some("lorenz96") => TwinConfig::lorenz96(1.0),
        Some("lorenz63") | None => TwinConfig::lorenz63(1.0),
        Some(other) => return Err(format!("unknown model `{other}`").into()),
    };
    let table = run_ensemble(&cfg)?;

    let acc = accuracy_profile(&table, &default_accuracy_grid())?;
    println!("accuracy profile, {} realizations ({} excluded, {} degenerate)", acc.n_r, acc.excluded, acc.degenerate);
    println!("{:>8} {:>6} {:>6} {:>6}", "tau_f", "GN", "LS", "REG");
    for x in [0.0, 1.0, 2.0, 3.0, 5.0] {
        let f = |m: Method| acc.fraction_at(m, x).unwrap_or(f64::NAN);
        println!("{:>8.0e} {:>6.2} {:>6.2} {:>6.2}", 10f64.powf(-x), f(Method::GaussNewton), f(Method::LineSearch), f(Method::Regularised));
    }

    let rmse = rmse_profile(&table, RMSE_TAU_F, None)?;
    println!("\nRMSE profile at tau_f = {RMSE_TAU_F:.0e}");
    println!("{:>8} {:>6} {:>6} {:>6}", "RMSE", "GN", "LS", "REG");
    let last = *rmse.x.last().unwrap_or(&0.0);
    for frac in [0.05, 0.1, 0.25, 0.5, 1.0] {
        let x = frac * last;
        let f = |m: Method| rmse.fraction_at(m, x).unwrap_or(f64::NAN);
        println!("{:>8.3} {:>6.2} {:>6.2} {:>6.2}", x, f(Method::GaussNewton), f(Method::LineSearch), f(Method::Regularised));
    }
    Ok(())
}
