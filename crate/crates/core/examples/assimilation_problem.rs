//! Builds one Lorenz-63 realization by hand and inspects its cost,
//! gradient and Gauss-Newton Hessian conditioning at the background.
//!
//!     cargo run --release --example assimilation_problem

use fourdvar::assim::{condition_number, AssimilationProblem, ControlVector};
use fourdvar::cli::check::gradient_error;
use fourdvar::twin::{make_realization, ObsLayout, TwinConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for layout in [ObsLayout::Nobs1, ObsLayout::Nobs4] {
        let mut cfg = TwinConfig::lorenz63(1.0);
        cfg.layout = layout;
        let real = make_realization(&cfg, 0, None)?;
        let steps = cfg.window_steps()?;
        let problem = AssimilationProblem::new(cfg.spec.clone(), steps, real.x_b.clone(), cfg.var_b, real.obs.clone())?;

        let v0 = ControlVector::zeros(3);
        let v_true = problem.state_to_control(&real.x_ref)?;
        println!("layout {layout:?}: {} observation times, residual length {}", real.obs.steps().len(), problem.residual_len());
        println!("  J(background) = {:.4}", problem.cost(&v0)?);
        println!("  J(reference)  = {:.4}", problem.cost(&v_true)?);

        let g = problem.gradient(&v0)?;
        println!("  |grad J| = {:.4e}, FD relative error {:.2e}", g.norm(), gradient_error(&problem, &v0.0, 1e-6)?);

        let (lo, hi) = problem.gn_hessian_spectrum(&v0)?;
        let kappa = condition_number(&problem.gn_hessian(&v0)?)?;
        println!("  J^T J spectrum [{lo:.4}, {hi:.4e}], condition number {kappa:.4e}");
    }
    Ok(())
}
