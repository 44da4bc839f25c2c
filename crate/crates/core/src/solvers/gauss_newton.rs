use nalgebra::DVector;

use super::{
    check_stop, gauss_newton_step_from, start, LeastSquaresProblem, Method, SolverError,
    SolverOptions, SolverTrace, StopReason, StopState, TrialRecord, TRIAL_EVALS,
};

/// Unsafeguarded Gauss-Newton: every step `S s = -grad J` is taken, so the
/// cost may increase.
pub fn solve_gn<P: LeastSquaresProblem>(
    problem: &P,
    v0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<SolverTrace, SolverError> {
    let (mut counter, mut current, mut run) = match start(problem, v0, opts, Method::GaussNewton)? {
        Ok(started) => started,
        Err(trace) => return Ok(trace),
    };
    let mut previous_cost = None;
    let mut k = 0;
    let reason = loop {
        let state = StopState {
            function_evals: counter.function_evals,
            jacobian_evals: counter.jacobian_evals,
            next_evals: TRIAL_EVALS,
            previous_cost,
            cost: current.cost,
            grad_norm: current.grad_norm(),
        };
        if let Some(reason) = check_stop(&state, opts) {
            break reason;
        }
        let step = match gauss_newton_step_from(&current) {
            Ok(step) => step,
            Err(e) => {
                run.failure = Some(e.to_string());
                break StopReason::StepFailed;
            }
        };
        let slope = step.dot(&current.grad);
        let step_norm = step.norm();
        let mut record = TrialRecord {
            k,
            function_evals: 0,
            jacobian_evals: 0,
            base_cost: current.cost,
            cost: f64::INFINITY,
            slope,
            step_norm,
            parameter: 1.0,
            predicted_decrease: None,
            rho: None,
            accepted: false,
            grad_norm: None,
        };
        let next = counter.evaluate(&current.v + &step).and_then(|p| counter.accept(p));
        record.function_evals = counter.function_evals;
        record.jacobian_evals = counter.jacobian_evals;
        match next {
            Ok(it) => {
                record.cost = it.cost;
                record.accepted = true;
                record.grad_norm = Some(it.grad_norm());
                run.trials.push(record);
                previous_cost = Some(current.cost);
                current = it;
                run.accepted(&current, step_norm);
                k += 1;
            }
            Err(msg) => {
                run.trials.push(record);
                run.failure = Some(msg);
                break StopReason::NonFinite;
            }
        }
    };
    Ok(run.finish(&counter, &current, reason))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::test_problems::{Affine, Scalar};
    use nalgebra::DMatrix;

    #[test]
    fn quadratic_converges_in_one_iteration() {
        // p = 0 analogue: r(v) = v
        let prob = Affine { a: DMatrix::identity(3, 3), b: DVector::zeros(3) };
        let v0 = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let trace = solve_gn(&prob, &v0, &SolverOptions::with_budget(100)).unwrap();
        assert_eq!(trace.accepted_count(), 1);
        assert_eq!(trace.final_v, DVector::zeros(3));
        assert_eq!(trace.stop_reason, StopReason::GradNorm);
        assert_eq!(trace.function_evals, trace.jacobian_evals);
    }

    #[test]
    fn budget_of_eight_allows_three_steps() {
        // r(v) = v^3 - 8 converges slowly enough to exhaust the budget
        let prob = Scalar { r: |v: f64| v.powi(3) - 8.0, dr: |v: f64| 3.0 * v * v };
        let trace = solve_gn(&prob, &DVector::from_element(1, 10.0), &SolverOptions::with_budget(8)).unwrap();
        assert_eq!(trace.stop_reason, StopReason::Budget);
        assert_eq!(trace.function_evals, 4);
        assert_eq!(trace.jacobian_evals, 4);
        assert_eq!(trace.trials.len(), 3);
    }

    #[test]
    fn non_finite_step_is_recorded() {
        let prob = Scalar {
            r: |v: f64| if v.abs() > 50.0 { f64::NAN } else { v.sin() + 0.5 },
            dr: |v: f64| v.cos(),
        };
        // near a critical point of sin the GN step is huge
        let trace = solve_gn(&prob, &DVector::from_element(1, 1.5707), &SolverOptions::with_budget(20)).unwrap();
        assert_eq!(trace.stop_reason, StopReason::NonFinite);
        assert!(trace.failure.is_some());
        assert_eq!(trace.best_v[0], 1.5707);
        assert!(trace.best_cost.is_finite());
    }

    #[test]
    fn cost_may_increase_and_best_is_tracked() {
        // r(v) = atan(v): GN overshoots and diverges from |v0| large enough
        let prob = Scalar { r: |v: f64| v.atan(), dr: |v: f64| 1.0 / (1.0 + v * v) };
        let trace = solve_gn(&prob, &DVector::from_element(1, 1.5), &SolverOptions::with_budget(8)).unwrap();
        let costs = trace.accepted_costs();
        assert!(costs.windows(2).any(|w| w[1] > w[0]));
        assert_eq!(trace.best_cost, costs.iter().cloned().fold(f64::INFINITY, f64::min));
        assert_eq!(trace.best_cost, trace.initial_cost);
    }
}
