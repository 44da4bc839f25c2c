//! Integrates both models, then Taylor-tests the one-step tangent linear
//! model and the residual Jacobian of a small assimilation problem.
//!
//!     cargo run --release --example tangent_linear

use fourdvar::assim::ControlVector;
use fourdvar::cli::check::{realization_problem, step_taylor, taylor_test, TAYLOR_EPS};
use fourdvar::models::ModelSpec;
use fourdvar::twin::TwinConfig;
use nalgebra::DVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for spec in [ModelSpec::lorenz63(), ModelSpec::lorenz96()] {
        let x0 = DVector::from_fn(spec.n, |i, _| 1.0 + 0.1 * i as f64);
        let traj = spec.propagate(&x0, 400)?;
        let x = traj.last();
        println!("{:?} n={} dt={}: |x_400| = {:.4}", spec.kind, spec.n, spec.dt, x.norm());

        let d = DVector::from_fn(spec.n, |i, _| ((i * 7 + 3) % 5) as f64 - 2.0);
        let report = step_taylor(&spec, &spec.step_tlm(x)?, x, &d)?;
        println!("  one-step TLM ratios:");
        for (eps, r) in TAYLOR_EPS.iter().zip(&report.ratios) {
            println!("    eps {eps:.0e}  ratio {r:.4}");
        }
        println!("  passed: {}", report.passed());
    }

    // residual Jacobian over a whole window
    let cfg = TwinConfig::lorenz63(1.0);
    let problem = realization_problem(&cfg, 0)?;
    let v = DVector::from_element(3, 0.3);
    let jac = problem.jacobian(&ControlVector(v.clone()))?;
    let d = DVector::from_vec(vec![1.0, -0.5, 0.25]);
    let report = taylor_test(
        |w| problem.residual(&ControlVector(w.clone())).map(|(r, _)| r),
        &jac,
        &v,
        &d,
        &TAYLOR_EPS,
    )?;
    println!("residual Jacobian ({} x {}): ratios {:?}", jac.nrows(), jac.ncols(), report.ratios);
    println!("passed: {}", report.passed());
    Ok(())
}
