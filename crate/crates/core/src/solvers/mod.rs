//! Outer-loop solvers for `min 0.5 |r(v)|^2` with exact inner solves.
//!
//! * [`solve_gn`]: plain Gauss-Newton.
//! * [`solve_ls`]: Gauss-Newton direction with backtracking-Armijo line search.
//! * [`solve_reg`]: Gauss-Newton with quadratic (Levenberg-Marquardt) regularisation.
//!
//! Evaluation accounting: `l` counts residual (function) evaluations and
//! `kJ` Jacobian evaluations. The evaluation at the starting point counts
//! as `l = 1, kJ = 1`. A Jacobian is evaluated at every accepted iterate and
//! nowhere else, so `kJ` is the number of accepted iterates plus one. Before
//! each trial the budget must have room for the trial's function evaluation
//! and the Jacobian an acceptance would require; otherwise the run stops
//! with [`StopReason::Budget`]. Hence `kJ + l <= tau_e` always holds.

mod gauss_newton;
mod line_search;
mod regularised;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gauss_newton::solve_gn;
pub use line_search::solve_ls;
pub use regularised::solve_reg;

/// A nonlinear least-squares problem with residual `r(v)` and Jacobian.
///
/// `Cache` carries whatever the residual evaluation produced that the
/// Jacobian at the same point can reuse (for 4D-Var, the model trajectory).
pub trait LeastSquaresProblem {
    type Cache;
    type Error: std::error::Error;

    fn n_params(&self) -> usize;
    fn residual(&self, v: &DVector<f64>) -> Result<(DVector<f64>, Self::Cache), Self::Error>;
    fn jacobian(&self, v: &DVector<f64>, cache: &Self::Cache) -> Result<DMatrix<f64>, Self::Error>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("starting point has dimension {got}, problem expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("predicted decrease {predicted:e} is not positive with gradient norm {grad_norm:e}")]
    NonPositivePredictedDecrease { predicted: f64, grad_norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GN")]
    GaussNewton,
    #[serde(rename = "LS")]
    LineSearch,
    #[serde(rename = "REG")]
    Regularised,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::GaussNewton, Method::LineSearch, Method::Regularised];

    pub fn label(self) -> &'static str {
        match self {
            Method::GaussNewton => "GN",
            Method::LineSearch => "LS",
            Method::Regularised => "REG",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "GN" => Ok(Method::GaussNewton),
            "LS" => Ok(Method::LineSearch),
            "REG" => Ok(Method::Regularised),
            other => Err(format!("unknown method `{other}` (expected GN, LS or REG)")),
        }
    }
}

/// Which convergence test accompanies the evaluation budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopMode {
    /// Relative change of the cost between accepted iterates.
    #[default]
    RelFunc,
    /// Gradient norm.
    GradNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    Budget,
    RelFunc,
    GradNorm,
    MaxBacktracks,
    NonFinite,
    /// The step could not be computed: the linear system was not numerically
    /// positive definite or the predicted decrease was not positive.
    StepFailed,
}

impl StopReason {
    pub fn label(self) -> &'static str {
        match self {
            StopReason::Budget => "Budget",
            StopReason::RelFunc => "RelFunc",
            StopReason::GradNorm => "GradNorm",
            StopReason::MaxBacktracks => "MaxBacktracks",
            StopReason::NonFinite => "NonFinite",
            StopReason::StepFailed => "StepFailed",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StopReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Budget" => Ok(StopReason::Budget),
            "RelFunc" => Ok(StopReason::RelFunc),
            "GradNorm" => Ok(StopReason::GradNorm),
            "MaxBacktracks" => Ok(StopReason::MaxBacktracks),
            "NonFinite" => Ok(StopReason::NonFinite),
            "StepFailed" => Ok(StopReason::StepFailed),
            other => Err(format!("unknown stop reason `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSearchOptions {
    pub alpha0: f64,
    /// Armijo sufficient-decrease constant.
    pub beta: f64,
    /// Backtracking factor.
    pub tau: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchOptions {
    fn default() -> Self {
        Self { alpha0: 1.0, beta: 0.1, tau: 0.5, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularisationOptions {
    pub gamma0: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Factor applied to gamma on very successful iterations.
    pub decrease: f64,
    /// Factor applied to gamma on unsuccessful iterations.
    pub increase: f64,
}

impl Default for RegularisationOptions {
    fn default() -> Self {
        Self { gamma0: 1.0, eta1: 0.1, eta2: 0.9, decrease: 0.5, increase: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Cap on `kJ + l`.
    pub tau_e: usize,
    /// Relative-function tolerance.
    pub tau_s: f64,
    /// Gradient-norm tolerance.
    pub tau_g: f64,
    pub stop_mode: StopMode,
    pub ls: LineSearchOptions,
    pub reg: RegularisationOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tau_e: 8,
            tau_s: 1e-5,
            tau_g: 1e-5,
            stop_mode: StopMode::RelFunc,
            ls: LineSearchOptions::default(),
            reg: RegularisationOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn with_budget(tau_e: usize) -> Self {
        Self { tau_e, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::InvalidOptions(msg));
        if self.tau_e < 2 {
            return bad(format!("tau_e must be at least 2, got {}", self.tau_e));
        }
        if !(self.tau_s >= 0.0) || !(self.tau_g >= 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        let ls = &self.ls;
        if !(ls.alpha0 > 0.0) {
            return bad(format!("alpha0 must be positive, got {}", ls.alpha0));
        }
        if !(ls.beta > 0.0 && ls.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", ls.beta));
        }
        if !(ls.tau > 0.0 && ls.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", ls.tau));
        }
        let reg = &self.reg;
        if !(reg.gamma0 > 0.0) {
            return bad(format!("gamma0 must be positive, got {}", reg.gamma0));
        }
        if !(reg.eta1 > 0.0 && reg.eta1 <= reg.eta2 && reg.eta2 < 1.0) {
            return bad(format!(
                "need 0 < eta1 <= eta2 < 1, got eta1 = {}, eta2 = {}",
                reg.eta1, reg.eta2
            ));
        }
        if !(reg.decrease > 0.0 && reg.decrease < 1.0 && reg.increase > 1.0) {
            return bad("gamma factors need 0 < decrease < 1 < increase".into());
        }
        Ok(())
    }
}

/// One trial point: a full GN step, one backtracking trial, or one
/// regularised step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// Index of the accepted iterate the trial started from.
    pub k: usize,
    /// `l` after this trial.
    pub function_evals: usize,
    /// `kJ` after this trial, including the Jacobian at an accepted point.
    pub jacobian_evals: usize,
    /// Cost at the iterate the step starts from.
    pub base_cost: f64,
    /// Cost at the trial point (infinite if the evaluation failed).
    pub cost: f64,
    /// `s^T grad J` for the computed step `s` (before any scaling by alpha).
    pub slope: f64,
    /// Norm of the displacement actually tried.
    pub step_norm: f64,
    /// 1 for GN, alpha for LS, gamma used to compute the step for REG.
    pub parameter: f64,
    /// REG only: `J(v) - m(s)`.
    pub predicted_decrease: Option<f64>,
    /// REG only: actual over predicted decrease.
    pub rho: Option<f64>,
    pub accepted: bool,
    /// Gradient norm at the trial point, known when it was accepted.
    pub grad_norm: Option<f64>,
}

/// Full history of one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub method: Method,
    pub initial_cost: f64,
    pub initial_grad_norm: f64,
    pub trials: Vec<TrialRecord>,
    pub final_v: DVector<f64>,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    /// Norm of the last accepted step (0 if none was accepted).
    pub final_step_norm: f64,
    /// Accepted iterate with the lowest cost.
    pub best_v: DVector<f64>,
    pub best_cost: f64,
    pub function_evals: usize,
    pub jacobian_evals: usize,
    pub stop_reason: StopReason,
    /// Message of the failure behind a `NonFinite` or `StepFailed` stop.
    pub failure: Option<String>,
}

impl SolverTrace {
    /// Costs of the accepted iterates, starting with the initial cost.
    pub fn accepted_costs(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost)
            .chain(self.trials.iter().filter(|t| t.accepted).map(|t| t.cost))
            .collect()
    }

    pub fn accepted_count(&self) -> usize {
        self.trials.iter().filter(|t| t.accepted).count()
    }

    pub fn total_evals(&self) -> usize {
        self.function_evals + self.jacobian_evals
    }

    /// Re-checks the recorded trials against the acceptance rules of the
    /// method and the evaluation budget.
    pub fn audit(&self, opts: &SolverOptions) -> TraceAudit {
        let mut audit = TraceAudit::default();
        if self.total_evals() > opts.tau_e {
            audit.violations.push(format!(
                "{}: kJ + l = {} exceeds tau_e = {}",
                self.method,
                self.total_evals(),
                opts.tau_e
            ));
        }
        for t in self.trials.iter().filter(|t| t.accepted) {
            match self.method {
                Method::GaussNewton => {}
                Method::LineSearch => {
                    audit.armijo_checked += 1;
                    let bound = t.base_cost + opts.ls.beta * t.parameter * t.slope;
                    if !(t.cost <= bound) {
                        audit.violations.push(format!(
                            "LS trial {}: cost {:e} above Armijo bound {:e}",
                            t.k, t.cost, bound
                        ));
                    }
                }
                Method::Regularised => {
                    audit.rho_checked += 1;
                    let rho = t.rho.unwrap_or(f64::NAN);
                    if !(rho >= opts.reg.eta1) {
                        audit.violations.push(format!("REG trial {}: accepted with rho = {rho:e}", t.k));
                    }
                }
            }
        }
        if self.method == Method::Regularised {
            let costs = self.accepted_costs();
            if let Some(w) = costs.windows(2).find(|w| w[1] > w[0]) {
                audit.violations.push(format!("REG accepted cost rose from {:e} to {:e}", w[0], w[1]));
            }
        }
        audit
    }
}

/// Result of [`SolverTrace::audit`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceAudit {
    /// Accepted LS steps whose Armijo inequality was re-checked.
    pub armijo_checked: usize,
    /// Accepted REG steps whose ratio was re-checked.
    pub rho_checked: usize,
    pub violations: Vec<String>,
}

impl TraceAudit {
    pub fn merge(&mut self, other: TraceAudit) {
        self.armijo_checked += other.armijo_checked;
        self.rho_checked += other.rho_checked;
        self.violations.extend(other.violations);
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Counters and other state fed to [`check_stop`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopState {
    pub function_evals: usize,
    pub jacobian_evals: usize,
    /// Evaluations the next action would consume.
    pub next_evals: usize,
    /// Cost at the previous accepted iterate, when the current iterate was
    /// just accepted.
    pub previous_cost: Option<f64>,
    pub cost: f64,
    pub grad_norm: f64,
}

/// Evaluates the stopping criteria in the order gradient, relative change,
/// budget. An exactly zero gradient stops with `GradNorm` in either mode
/// since no step can make progress.
pub fn check_stop(state: &StopState, opts: &SolverOptions) -> Option<StopReason> {
    if state.grad_norm == 0.0 {
        return Some(StopReason::GradNorm);
    }
    match opts.stop_mode {
        StopMode::GradNorm => {
            if state.grad_norm <= opts.tau_g {
                return Some(StopReason::GradNorm);
            }
        }
        StopMode::RelFunc => {
            if let Some(prev) = state.previous_cost {
                if (prev - state.cost).abs() / (1.0 + state.cost) <= opts.tau_s {
                    return Some(StopReason::RelFunc);
                }
            }
        }
    }
    if state.function_evals + state.jacobian_evals + state.next_evals > opts.tau_e {
        return Some(StopReason::Budget);
    }
    None
}

/// Solves `A s = b` for symmetric positive definite `A` by Cholesky
/// factorisation with one step of iterative refinement.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(SolverError::DimensionMismatch { expected: a.nrows(), got: b.len() });
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(a.clone()).ok_or(SolverError::NotSpd)?;
    let mut s = chol.solve(b);
    let resid = b - a * &s;
    s += chol.solve(&resid);
    if s.iter().all(|x| x.is_finite()) {
        Ok(s)
    } else {
        Err(SolverError::NotSpd)
    }
}

/// Gauss-Newton step: `J^T J s = -J^T r`.
pub fn gauss_newton_step(jac: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    regularised_step(&jac.tr_mul(jac), &jac.tr_mul(r), 0.0)
}

/// Regularised step: `(S + gamma I) s = -g`. `gamma = 0` gives the GN step.
pub fn regularised_step(
    s_matrix: &DMatrix<f64>,
    grad: &DVector<f64>,
    gamma: f64,
) -> Result<DVector<f64>, SolverError> {
    let mut a = s_matrix.clone();
    if gamma != 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += gamma;
        }
    }
    spd_solve(&a, &(-grad))
}

fn gauss_newton_step_from(it: &Iterate) -> Result<DVector<f64>, SolverError> {
    regularised_step(&it.s_matrix, &it.grad, 0.0)
}

/// Dispatches to the solver for `method`.
pub fn solve<P: LeastSquaresProblem>(
    problem: &P,
    v0: &DVector<f64>,
    method: Method,
    opts: &SolverOptions,
) -> Result<SolverTrace, SolverError> {
    match method {
        Method::GaussNewton => solve_gn(problem, v0, opts),
        Method::LineSearch => solve_ls(problem, v0, opts),
        Method::Regularised => solve_reg(problem, v0, opts),
    }
}

/// An accepted iterate with everything the step computation needs.
struct Iterate {
    v: DVector<f64>,
    cost: f64,
    jac: DMatrix<f64>,
    grad: DVector<f64>,
    s_matrix: DMatrix<f64>,
}

impl Iterate {
    fn grad_norm(&self) -> f64 {
        self.grad.norm()
    }
}

/// Residual evaluation at a trial point, before its Jacobian is known.
struct Evaluated<C> {
    v: DVector<f64>,
    r: DVector<f64>,
    cost: f64,
    cache: C,
}

/// Counting wrapper around the problem.
struct Counter<'a, P: LeastSquaresProblem> {
    problem: &'a P,
    function_evals: usize,
    jacobian_evals: usize,
}

impl<'a, P: LeastSquaresProblem> Counter<'a, P> {
    fn new(problem: &'a P) -> Self {
        Self { problem, function_evals: 0, jacobian_evals: 0 }
    }

    fn total(&self) -> usize {
        self.function_evals + self.jacobian_evals
    }

    /// Function evaluation; non-finite residuals count as failures.
    fn evaluate(&mut self, v: DVector<f64>) -> Result<Evaluated<P::Cache>, String> {
        self.function_evals += 1;
        let (r, cache) = self.problem.residual(&v).map_err(|e| e.to_string())?;
        let cost = 0.5 * r.norm_squared();
        if !cost.is_finite() {
            return Err("non-finite residual".to_string());
        }
        Ok(Evaluated { v, r, cost, cache })
    }

    fn accept(&mut self, point: Evaluated<P::Cache>) -> Result<Iterate, String> {
        self.jacobian_evals += 1;
        let jac = self.problem.jacobian(&point.v, &point.cache).map_err(|e| e.to_string())?;
        if !jac.iter().all(|x| x.is_finite()) {
            return Err("non-finite Jacobian".to_string());
        }
        let grad = jac.tr_mul(&point.r);
        let s_matrix = jac.tr_mul(&jac);
        Ok(Iterate { v: point.v, cost: point.cost, jac, grad, s_matrix })
    }
}

/// Bookkeeping shared by the three solvers.
struct Run {
    method: Method,
    trials: Vec<TrialRecord>,
    initial_cost: f64,
    initial_grad_norm: f64,
    best_v: DVector<f64>,
    best_cost: f64,
    last_step_norm: f64,
    failure: Option<String>,
}

impl Run {
    fn accepted(&mut self, it: &Iterate, step_norm: f64) {
        self.last_step_norm = step_norm;
        if it.cost < self.best_cost {
            self.best_cost = it.cost;
            self.best_v = it.v.clone();
        }
    }

    fn finish<P: LeastSquaresProblem>(
        self,
        counter: &Counter<'_, P>,
        current: &Iterate,
        stop_reason: StopReason,
    ) -> SolverTrace {
        SolverTrace {
            method: self.method,
            initial_cost: self.initial_cost,
            initial_grad_norm: self.initial_grad_norm,
            trials: self.trials,
            final_v: current.v.clone(),
            final_cost: current.cost,
            final_grad_norm: current.grad_norm(),
            final_step_norm: self.last_step_norm,
            best_v: self.best_v,
            best_cost: self.best_cost,
            function_evals: counter.function_evals,
            jacobian_evals: counter.jacobian_evals,
            stop_reason,
            failure: self.failure,
        }
    }
}

/// Shared start-up: validates inputs and evaluates `r` and `J` at `v0`.
/// Returns either the first iterate or a finished trace if `v0` itself
/// could not be evaluated.
fn start<'a, P: LeastSquaresProblem>(
    problem: &'a P,
    v0: &DVector<f64>,
    opts: &SolverOptions,
    method: Method,
) -> Result<Result<(Counter<'a, P>, Iterate, Run), SolverTrace>, SolverError> {
    opts.validate()?;
    if v0.len() != problem.n_params() {
        return Err(SolverError::DimensionMismatch { expected: problem.n_params(), got: v0.len() });
    }
    let mut counter = Counter::new(problem);
    let initial = counter.evaluate(v0.clone()).and_then(|p| counter.accept(p));
    match initial {
        Ok(it) => {
            let run = Run {
                method,
                trials: Vec::new(),
                initial_cost: it.cost,
                initial_grad_norm: it.grad_norm(),
                best_v: it.v.clone(),
                best_cost: it.cost,
                last_step_norm: 0.0,
                failure: None,
            };
            Ok(Ok((counter, it, run)))
        }
        Err(msg) => Ok(Err(SolverTrace {
            method,
            initial_cost: f64::NAN,
            initial_grad_norm: f64::NAN,
            trials: Vec::new(),
            final_v: v0.clone(),
            final_cost: f64::NAN,
            final_grad_norm: f64::NAN,
            final_step_norm: 0.0,
            best_v: v0.clone(),
            best_cost: f64::NAN,
            function_evals: counter.function_evals,
            jacobian_evals: counter.jacobian_evals,
            stop_reason: StopReason::NonFinite,
            failure: Some(msg),
        })),
    }
}

/// Every trial needs its function evaluation plus the Jacobian that
/// acceptance would trigger.
const TRIAL_EVALS: usize = 2;


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(l: usize, kj: usize, prev: Option<f64>, cost: f64, g: f64) -> StopState {
        StopState {
            function_evals: l,
            jacobian_evals: kj,
            next_evals: 2,
            previous_cost: prev,
            cost,
            grad_norm: g,
        }
    }

    #[test]
    fn budget_cap_reached() {
        let opts = SolverOptions::with_budget(8);
        assert_eq!(check_stop(&state(4, 4, None, 3.0, 1.0), &opts), Some(StopReason::Budget));
        assert_eq!(check_stop(&state(3, 3, None, 3.0, 1.0), &opts), None);
    }

    #[test]
    fn relfunc_fires_on_unchanged_cost() {
        let opts = SolverOptions { tau_s: 1e-300, ..SolverOptions::with_budget(100) };
        assert_eq!(check_stop(&state(2, 2, Some(3.0), 3.0, 1.0), &opts), Some(StopReason::RelFunc));
        assert_eq!(check_stop(&state(2, 2, Some(3.5), 3.0, 1.0), &opts), None);
        // not on the first iterate
        assert_eq!(check_stop(&state(1, 1, None, 3.0, 1.0), &opts), None);
    }

    #[test]
    fn gradnorm_mode() {
        let opts = SolverOptions { stop_mode: StopMode::GradNorm, ..SolverOptions::with_budget(100) };
        assert_eq!(check_stop(&state(2, 2, Some(3.0), 3.0, 0.0), &opts), Some(StopReason::GradNorm));
        assert_eq!(check_stop(&state(2, 2, Some(3.0), 3.0, 1e-6), &opts), Some(StopReason::GradNorm));
        // relative change is ignored in this mode
        assert_eq!(check_stop(&state(2, 2, Some(3.0), 3.0, 1.0), &opts), None);
    }

    #[test]
    fn option_validation() {
        assert!(SolverOptions::default().validate().is_ok());
        let mut o = SolverOptions::with_budget(1);
        assert!(o.validate().is_err());
        o = SolverOptions::default();
        o.ls.beta = 1.0;
        assert!(o.validate().is_err());
        o = SolverOptions::default();
        o.reg.eta1 = 0.95;
        assert!(o.validate().is_err());
        o = SolverOptions::default();
        o.reg.gamma0 = 0.0;
        assert!(o.validate().is_err());
    }

    #[test]
    fn spd_solve_small_cases() {
        let b = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        assert_eq!(spd_solve(&DMatrix::identity(3, 3), &b).unwrap(), b);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let s = spd_solve(&a, &DVector::from_vec(vec![2.0, 8.0])).unwrap();
        assert_relative_eq!(s, DVector::from_vec(vec![1.0, 2.0]), epsilon = 1e-15);
        let indefinite = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(spd_solve(&indefinite, &DVector::from_vec(vec![1.0, 1.0])), Err(SolverError::NotSpd));
    }

    #[test]
    fn spd_solve_random_40() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = DMatrix::from_fn(60, 40, |_, _| rng.random_range(-1.0..1.0));
        let a = g.tr_mul(&g) + DMatrix::identity(40, 40);
        let b = DVector::from_fn(40, |_, _| rng.random_range(-5.0..5.0));
        let s = spd_solve(&a, &b).unwrap();
        assert!((&a * &s - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn zero_gamma_matches_gauss_newton_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let jac = DMatrix::from_fn(7, 4, |i, j| if i == j { 1.0 } else { rng.random_range(-2.0..2.0) });
        let r = DVector::from_fn(7, |_, _| rng.random_range(-3.0..3.0));
        let gn = gauss_newton_step(&jac, &r).unwrap();
        let reg = regularised_step(&jac.tr_mul(&jac), &jac.tr_mul(&r), 0.0).unwrap();
        assert!((gn - reg).amax() <= 1e-12);
    }

    #[test]
    fn large_gamma_approaches_scaled_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let jac = DMatrix::from_fn(9, 5, |_, _| rng.random_range(-2.0..2.0));
        let r = DVector::from_fn(9, |_, _| rng.random_range(-3.0..3.0));
        let g = jac.tr_mul(&r);
        let gamma = 1e8;
        let s = regularised_step(&jac.tr_mul(&jac), &g, gamma).unwrap();
        let sd = -&g / gamma;
        assert!((&s - &sd).norm() <= 1e-6 * sd.norm());
    }

    #[test]
    fn labels_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        for r in [
            StopReason::Budget,
            StopReason::RelFunc,
            StopReason::GradNorm,
            StopReason::MaxBacktracks,
            StopReason::NonFinite,
            StopReason::StepFailed,
        ] {
            assert_eq!(r.label().parse::<StopReason>().unwrap(), r);
        }
        assert!("XX".parse::<Method>().is_err());
    }
}
