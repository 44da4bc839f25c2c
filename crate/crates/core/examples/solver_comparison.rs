//! Runs GN, LS and REG on the same Lorenz-96 realization and prints every
//! trial. Pass a budget as the first argument (default 100).
//!
//!     cargo run --release --example solver_comparison -- 30

use fourdvar::assim::{AssimilationProblem, ControlVector};
use fourdvar::profiles::analysis_rmse;
use fourdvar::solvers::{solve, Method, SolverOptions};
use fourdvar::twin::{make_realization, TwinConfig};
use nalgebra::DVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let budget: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let cfg = TwinConfig::lorenz96(0.1);
    let real = make_realization(&cfg, 3, None)?;
    let problem = AssimilationProblem::new(cfg.spec.clone(), cfg.window_steps()?, real.x_b.clone(), cfg.var_b, real.obs.clone())?;
    let opts = SolverOptions { tau_s: 1e-8, ..SolverOptions::with_budget(budget) };
    let v0 = DVector::zeros(cfg.spec.n);
    let v_true = problem.state_to_control(&real.x_ref)?;
    println!("J(background) = {:.6}  J(reference) = {:.6}", problem.cost(&ControlVector(v0.clone()))?, problem.cost(&v_true)?);

    for method in Method::ALL {
        let trace = solve(&problem, &v0, method, &opts)?;
        println!("\n{method}: stop {} after l={} kJ={}", trace.stop_reason, trace.function_evals, trace.jacobian_evals);
        println!("  {:>3} {:>14} {:>10} {:>10} {:>8}", "k", "trial cost", "step", "param", "");
        for t in &trace.trials {
            let rho = t.rho.map(|r| format!("rho {r:.3}")).unwrap_or_default();
            let mark = if t.accepted { "accepted" } else { "rejected" };
            println!("  {:>3} {:>14.6} {:>10.3e} {:>10.3e} {mark} {rho}", t.k, t.cost, t.step_norm, t.parameter);
        }
        let err = analysis_rmse(&problem.control_to_state(&ControlVector(trace.best_v.clone()))?, &real.x_ref);
        println!("  best cost {:.6}, RMSE vs reference {:.4}", trace.best_cost, err);
        let audit = trace.audit(&opts);
        println!("  audit passed: {}", audit.passed());
    }
    Ok(())
}
