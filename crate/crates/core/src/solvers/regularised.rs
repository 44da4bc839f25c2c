use nalgebra::DVector;

use super::{
    check_stop, regularised_step, start, LeastSquaresProblem, Method, SolverError, SolverOptions,
    SolverTrace, StopReason, StopState, TrialRecord, TRIAL_EVALS,
};

/// Gauss-Newton with quadratic regularisation.
///
/// The step solves `(S + gamma I) s = -grad J`. It is accepted when
/// `rho = (J(v) - J(v + s)) / (J(v) - m(s)) >= eta1`, with
/// `m(s) = 0.5 |J s + r|^2 + 0.5 gamma |s|^2`. gamma is multiplied by
/// `decrease` when `rho >= eta2`, kept when `eta1 <= rho < eta2` and
/// multiplied by `increase` otherwise.
///
/// The predicted decrease is evaluated as
/// `-g^T s - 0.5 |J s|^2 - 0.5 gamma |s|^2`, which equals `J(v) - m(s)`
/// identically but does not cancel against `J(v)`.
pub fn solve_reg<P: LeastSquaresProblem>(
    problem: &P,
    v0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<SolverTrace, SolverError> {
    let (mut counter, mut current, mut run) = match start(problem, v0, opts, Method::Regularised)? {
        Ok(started) => started,
        Err(trace) => return Ok(trace),
    };
    let reg = opts.reg;
    let mut gamma = reg.gamma0;
    let mut previous_cost = None;
    let mut k = 0;
    let reason = loop {
        let state = StopState {
            function_evals: counter.function_evals,
            jacobian_evals: counter.jacobian_evals,
            next_evals: TRIAL_EVALS,
            previous_cost: previous_cost.take(),
            cost: current.cost,
            grad_norm: current.grad_norm(),
        };
        if let Some(reason) = check_stop(&state, opts) {
            break reason;
        }
        let step = match regularised_step(&current.s_matrix, &current.grad, gamma) {
            Ok(step) => step,
            Err(e) => {
                run.failure = Some(e.to_string());
                break StopReason::StepFailed;
            }
        };
        let slope = step.dot(&current.grad);
        let js = &current.jac * &step;
        let predicted = -slope - 0.5 * js.norm_squared() - 0.5 * gamma * step.norm_squared();
        if !(predicted > 0.0) {
            let e = SolverError::NonPositivePredictedDecrease { predicted, grad_norm: current.grad_norm() };
            run.failure = Some(e.to_string());
            break StopReason::StepFailed;
        }
        let evaluated = counter.evaluate(&current.v + &step);
        let trial_cost = evaluated.as_ref().map(|p| p.cost).unwrap_or(f64::INFINITY);
        let rho = if trial_cost.is_finite() {
            (current.cost - trial_cost) / predicted
        } else {
            f64::NEG_INFINITY
        };
        let accepted = rho >= reg.eta1;
        let gamma_used = gamma;
        gamma = if rho >= reg.eta2 {
            gamma * reg.decrease
        } else if accepted {
            gamma
        } else {
            gamma * reg.increase
        };
        let mut record = TrialRecord {
            k,
            function_evals: counter.function_evals,
            jacobian_evals: counter.jacobian_evals,
            base_cost: current.cost,
            cost: trial_cost,
            slope,
            step_norm: step.norm(),
            parameter: gamma_used,
            predicted_decrease: Some(predicted),
            rho: Some(rho),
            accepted: false,
            grad_norm: None,
        };
        if accepted {
            let point = evaluated.expect("accepted trial has a finite cost");
            match counter.accept(point) {
                Ok(it) => {
                    record.accepted = true;
                    record.jacobian_evals = counter.jacobian_evals;
                    record.grad_norm = Some(it.grad_norm());
                    run.trials.push(record);
                    previous_cost = Some(current.cost);
                    current = it;
                    run.accepted(&current, step.norm());
                    k += 1;
                }
                Err(msg) => {
                    record.jacobian_evals = counter.jacobian_evals;
                    run.trials.push(record);
                    run.failure = Some(msg);
                    break StopReason::NonFinite;
                }
            }
        } else {
            run.trials.push(record);
        }
    };
    Ok(run.finish(&counter, &current, reason))
}
