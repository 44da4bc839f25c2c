use nalgebra::DVector;

use super::{
    check_stop, gauss_newton_step_from, start, LeastSquaresProblem, Method, SolverError,
    SolverOptions, SolverTrace, StopReason, StopState, TrialRecord, TRIAL_EVALS,
};

/// Gauss-Newton direction with backtracking until the Armijo condition
/// `J(v + alpha s) <= J(v) + beta alpha s^T grad J(v)` holds. Failed
/// evaluations count as Armijo failures.
pub fn solve_ls<P: LeastSquaresProblem>(
    problem: &P,
    v0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<SolverTrace, SolverError> {
    let (mut counter, mut current, mut run) = match start(problem, v0, opts, Method::LineSearch)? {
        Ok(started) => started,
        Err(trace) => return Ok(trace),
    };
    let ls = opts.ls;
    let mut previous_cost = None;
    let mut k = 0;
    let reason = 'outer: loop {
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
        let mut alpha = ls.alpha0;
        let mut backtracks = 0;
        loop {
            if counter.total() + TRIAL_EVALS > opts.tau_e {
                break 'outer StopReason::Budget;
            }
            let trial = &current.v + &step * alpha;
            let evaluated = counter.evaluate(trial);
            let trial_cost = evaluated.as_ref().map(|p| p.cost).unwrap_or(f64::INFINITY);
            let armijo = trial_cost <= current.cost + ls.beta * alpha * slope;
            let mut record = TrialRecord {
                k,
                function_evals: counter.function_evals,
                jacobian_evals: counter.jacobian_evals,
                base_cost: current.cost,
                cost: trial_cost,
                slope,
                step_norm: alpha * step.norm(),
                parameter: alpha,
                predicted_decrease: None,
                rho: None,
                accepted: false,
                grad_norm: None,
            };
            if armijo {
                let point = evaluated.expect("finite trial cost implies a successful evaluation");
                match counter.accept(point) {
                    Ok(it) => {
                        record.accepted = true;
                        record.jacobian_evals = counter.jacobian_evals;
                        record.grad_norm = Some(it.grad_norm());
                        run.trials.push(record);
                        previous_cost = Some(current.cost);
                        let step_norm = (&it.v - &current.v).norm();
                        current = it;
                        run.accepted(&current, step_norm);
                        k += 1;
                        break;
                    }
                    Err(msg) => {
                        record.jacobian_evals = counter.jacobian_evals;
                        run.trials.push(record);
                        run.failure = Some(msg);
                        break 'outer StopReason::NonFinite;
                    }
                }
            }
            run.trials.push(record);
            backtracks += 1;
            if backtracks > ls.max_backtracks {
                break 'outer StopReason::MaxBacktracks;
            }
            alpha *= ls.tau;
        }
    };
    Ok(run.finish(&counter, &current, reason))
}
