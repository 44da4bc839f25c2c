//! Compares the observation layouts on Lorenz-63 with a large budget:
//! fraction of realizations GN solves to 1e-2 and median final cost.
//!
//!     cargo run --release --example observation_layouts

use fourdvar::profiles::accuracy_profile;
use fourdvar::solvers::{Method, SolverOptions};
use fourdvar::twin::{run_ensemble, ObsLayout, TwinConfig};

fn median(mut xs: Vec<f64>) -> f64 {
    xs.retain(|x| x.is_finite());
    xs.sort_by(f64::total_cmp);
    if xs.is_empty() {
        return f64::NAN;
    }
    xs[xs.len() / 2]
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:<7} {:>6} {:>6} {:>6} {:>12}", "layout", "GN", "LS", "REG", "median J GN");
    for layout in [ObsLayout::Nobs1, ObsLayout::Nobs2, ObsLayout::Nobs3, ObsLayout::Nobs4] {
        let mut cfg = TwinConfig::lorenz63(1.0);
        cfg.layout = layout;
        cfg.solver = SolverOptions::with_budget(1000);
        let table = run_ensemble(&cfg)?;
        let profile = accuracy_profile(&table, &[2.0])?;
        let f = |m: Method| profile.curve(m).map(|c| c[0]).unwrap_or(f64::NAN);
        let gn_cost = median(table.iter().filter(|r| r.method == Method::GaussNewton).map(|r| r.cost_final).collect());
        println!(
            "{:<7} {:>6.2} {:>6.2} {:>6.2} {:>12.4}",
            format!("{layout:?}"),
            f(Method::GaussNewton),
            f(Method::LineSearch),
            f(Method::Regularised),
            gn_cost
        );
    }
    Ok(())
}
