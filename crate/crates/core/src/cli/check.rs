//! Numerical verification suite behind `fourdvar check`.
//!
//! Each check builds its problems from a twin configuration and reports the
//! measured quantity next to the tolerance it was held to.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::assim::{AssimError, AssimilationProblem, ControlVector, ObservationEntry, ObservationSet};
use crate::models::{ModelError, ModelSpec, StateVector};
use crate::solvers::{solve, spd_solve, Method, SolverOptions, StopMode};
use crate::twin::{audit_ensemble, fixed_reference, make_realization, stream_rng, ObsLayout, Stream, TwinConfig};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Relative tolerance of the finite-difference gradient check.
pub const FD_TOL: f64 = 1e-6;
/// Accepted band for successive Taylor remainder ratios.
pub const TAYLOR_BAND: (f64, f64) = (1.8, 2.2);
/// Perturbation sizes of the Taylor test.
pub const TAYLOR_EPS: [f64; 6] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
/// Consecutive in-band ratios that establish the linear regime.
pub const TAYLOR_RUN: usize = 3;
/// Allowed shortfall of the smallest Gauss-Newton Hessian eigenvalue below 1.
pub const EIG_TOL: f64 = 1e-10;
/// Tolerance on the distance to the closed-form solution of affine problems.
pub const AFFINE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn random_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn unit_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    random_vector(n, rng).normalize()
}

/// `|g_fd - g| / max(|g|, 1)` with a full central-difference gradient.
pub fn gradient_error(problem: &AssimilationProblem, v: &DVector<f64>, h: f64) -> Result<f64, AssimError> {
    let grad = problem.gradient(&ControlVector(v.clone()))?;
    let mut fd = DVector::zeros(v.len());
    for i in 0..v.len() {
        let mut plus = v.clone();
        let mut minus = v.clone();
        plus[i] += h;
        minus[i] -= h;
        fd[i] = (problem.cost(&ControlVector(plus))? - problem.cost(&ControlVector(minus))?) / (2.0 * h);
    }
    Ok((fd - &grad).norm() / grad.norm().max(1.0))
}

/// Normalised first-order remainders `e(eps) = |f(x + eps d) - f(x) - eps M d| / |eps d|`
/// and the ratios `e(eps) / e(eps / 2)`, which tend to 2 for a correct
/// derivative `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorReport {
    pub ratios: Vec<f64>,
    pub remainders: Vec<f64>,
    /// Rounding level of each remainder, `64 u |f(x)| / |eps d|`.
    pub noise: Vec<f64>,
}

impl TaylorReport {
    /// Linear regime found, or `f` linear with an exact derivative.
    pub fn passed(&self) -> bool {
        taylor_passes(&self.ratios) || self.is_exact()
    }

    /// Every remainder is at rounding level: `f` is linear along `d` and
    /// `M` is exact.
    pub fn is_exact(&self) -> bool {
        self.remainders.iter().zip(&self.noise).all(|(e, floor)| e <= floor)
    }
}

pub fn taylor_test<F>(f: F, m: &DMatrix<f64>, x: &DVector<f64>, d: &DVector<f64>, eps: &[f64]) -> Result<TaylorReport, AssimError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, AssimError>,
{
    let f0 = f(x)?;
    let md = m * d;
    let remainder = |e: f64| -> Result<f64, AssimError> {
        let fe = f(&(x + d * e))?;
        Ok((fe - &f0 - &md * e).norm() / (d.norm() * e))
    };
    let mut ratios = Vec::with_capacity(eps.len());
    let mut remainders = Vec::with_capacity(eps.len());
    let mut noise = Vec::with_capacity(eps.len());
    for &e in eps {
        let r = remainder(e)?;
        ratios.push(r / remainder(e / 2.0)?);
        remainders.push(r);
        noise.push(64.0 * f64::EPSILON * f0.norm().max(1.0) / (e * d.norm()));
    }
    Ok(TaylorReport { ratios, remainders, noise })
}

/// True when [`TAYLOR_RUN`] consecutive ratios lie in [`TAYLOR_BAND`].
pub fn taylor_passes(ratios: &[f64]) -> bool {
    let ok: Vec<bool> = ratios.iter().map(|r| *r >= TAYLOR_BAND.0 && *r <= TAYLOR_BAND.1).collect();
    ok.windows(TAYLOR_RUN).any(|w| w.iter().all(|&b| b))
}

/// A deliberately wrong one-step tangent linear model: every stage Jacobian
/// is evaluated at the step's starting point instead of the stage argument.
pub fn stale_stage_tlm(spec: &ModelSpec, x: &StateVector) -> Result<DMatrix<f64>, ModelError> {
    let jac = spec.rhs_jacobian(x)? * spec.dt;
    let n = spec.n;
    let mut power = DMatrix::identity(n, n);
    let mut out = DMatrix::zeros(n, n);
    for c in spec.scheme.polynomial() {
        out += &power * *c;
        power = &power * &jac;
    }
    Ok(out)
}

/// Taylor test of a one-step TLM at `x` along `d`.
pub fn step_taylor(spec: &ModelSpec, tlm: &DMatrix<f64>, x: &StateVector, d: &DVector<f64>) -> Result<TaylorReport, AssimError> {
    taylor_test(|y| Ok(spec.step(y)?), tlm, x, d, &TAYLOR_EPS)
}

/// Problem of realization `index` of `cfg`.
pub fn realization_problem(cfg: &TwinConfig, index: usize) -> Result<AssimilationProblem, String> {
    let shared = fixed_reference(cfg).map_err(|e| e.to_string())?;
    let real = make_realization(cfg, index, Some(&shared)).map_err(|e| e.to_string())?;
    AssimilationProblem::new(cfg.spec.clone(), cfg.window_steps().map_err(|e| e.to_string())?, real.x_b, cfg.var_b, real.obs)
        .map_err(|e| e.to_string())
}

/// Affine problem: the realization's background with observations of the
/// configured components at step 0 only.
pub fn affine_problem(cfg: &TwinConfig, index: usize) -> Result<AssimilationProblem, String> {
    let base = realization_problem(cfg, index)?;
    let comps = if cfg.components.is_empty() { vec![0] } else { cfg.components.clone() };
    let mut rng = stream_rng(cfg.base_seed, index as u64, Stream::Observation);
    let values = DVector::from_iterator(
        comps.len(),
        comps.iter().map(|&c| base.background()[c] + cfg.var_o.sqrt() * rng.sample::<f64, _>(StandardNormal)),
    );
    let obs = ObservationSet::new(vec![ObservationEntry { step: 0, components: comps, values, var_o: cfg.var_o }], cfg.spec.n)
        .map_err(|e| e.to_string())?;
    AssimilationProblem::new(cfg.spec.clone(), base.steps(), base.background().clone(), cfg.var_b, obs)
        .map_err(|e| e.to_string())
}

/// Minimiser of an affine problem from the normal equations
/// `(I + J_o^T J_o) v = -J_o^T r_o(0)`, where `J_o` and `r_o` are the
/// observation blocks.
pub fn affine_solution(problem: &AssimilationProblem) -> Result<DVector<f64>, String> {
    let n = problem.n();
    let zero = ControlVector::zeros(n);
    let (r0, _) = problem.residual(&zero).map_err(|e| e.to_string())?;
    let jac = problem.jacobian(&zero).map_err(|e| e.to_string())?;
    let j_o = jac.rows(n, jac.nrows() - n).into_owned();
    let r_o = r0.rows(n, r0.len() - n).into_owned();
    let lhs = DMatrix::identity(n, n) + j_o.tr_mul(&j_o);
    spd_solve(&lhs, &(-j_o.tr_mul(&r_o))).map_err(|e| e.to_string())
}

/// Per-method distance to the closed-form solution of an affine problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineReport {
    /// GN after exactly one iteration.
    pub gn_one_step: f64,
    pub ls_unit_step_accepted: bool,
    pub ls: f64,
    pub reg: f64,
}

impl AffineReport {
    pub fn passed(&self) -> bool {
        self.gn_one_step <= AFFINE_TOL && self.ls_unit_step_accepted && self.ls <= AFFINE_TOL && self.reg <= AFFINE_TOL
    }
}

/// Relative distances `|v - v*| / max(|v*|, 1)` reached by the three
/// methods on [`affine_problem`].
pub fn affine_report(problem: &AssimilationProblem) -> Result<AffineReport, String> {
    let exact = affine_solution(problem)?;
    let v0 = DVector::zeros(problem.n());
    let dist = |v: &DVector<f64>| (v - &exact).norm() / exact.norm().max(1.0);
    let err = |e: crate::solvers::SolverError| e.to_string();
    // a budget of 4 leaves room for exactly one trial
    let gn = solve(problem, &v0, Method::GaussNewton, &SolverOptions::with_budget(4)).map_err(err)?;
    let long = SolverOptions { stop_mode: StopMode::GradNorm, tau_g: 1e-12, ..SolverOptions::with_budget(200) };
    let ls = solve(problem, &v0, Method::LineSearch, &long).map_err(err)?;
    let reg = solve(problem, &v0, Method::Regularised, &long).map_err(err)?;
    let gn_one_step = if gn.accepted_count() == 1 { dist(&gn.final_v) } else { f64::INFINITY };
    Ok(AffineReport {
        gn_one_step,
        ls_unit_step_accepted: ls.trials.first().is_some_and(|t| t.accepted && t.parameter == 1.0),
        ls: dist(&ls.best_v),
        reg: dist(&reg.best_v),
    })
}

/// Runs the whole suite on `n_problems` realizations of `cfg`.
pub fn run_checks(cfg: &TwinConfig, n_problems: usize) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut rng = stream_rng(cfg.base_seed ^ 0x5eed, 0, Stream::Reference);
    let problems: Result<Vec<_>, String> = (0..n_problems).map(|i| realization_problem(cfg, i)).collect();
    let problems = match problems {
        Ok(p) => p,
        Err(e) => return vec![CheckOutcome::new("problem setup", false, e)],
    };
    let n = cfg.spec.n;

    // finite-difference gradient at random controls
    let mut worst = 0.0f64;
    let mut failure = None;
    for p in &problems {
        let v = random_vector(n, &mut rng);
        match gradient_error(p, &v, FD_STEP) {
            Ok(e) => worst = worst.max(e),
            Err(e) => failure = Some(e.to_string()),
        }
    }
    out.push(match failure {
        Some(e) => CheckOutcome::new("gradient vs finite differences", false, e),
        None => CheckOutcome::new(
            "gradient vs finite differences",
            worst <= FD_TOL,
            format!("max relative error {worst:.3e} (tolerance {FD_TOL:.0e}, h = {FD_STEP:.0e}, {} problems)", problems.len()),
        ),
    });

    if cfg.layout == ObsLayout::NoObs {
        let worst = problems
            .iter()
            .map(|p| {
                let v = random_vector(n, &mut rng);
                p.gradient(&ControlVector(v.clone())).map(|g| (g - v).amax()).unwrap_or(f64::INFINITY)
            })
            .fold(0.0, f64::max);
        out.push(CheckOutcome::new(
            "gradient equals control without observations",
            worst == 0.0,
            format!("max |grad J - v| = {worst:e}"),
        ));
    }

    // Taylor tests of the one-step TLM and of the full residual Jacobian
    let x = problems[0].background().clone();
    let d = unit_vector(n, &mut rng);
    let tlm_result = cfg
        .spec
        .step_tlm(&x)
        .map_err(AssimError::from)
        .and_then(|m| step_taylor(&cfg.spec, &m, &x, &d));
    out.push(taylor_outcome("one-step tangent linear model (Taylor)", tlm_result));
    let residual_result = {
        let p = &problems[0];
        let v = random_vector(n, &mut rng);
        let dv = unit_vector(n, &mut rng);
        p.jacobian(&ControlVector(v.clone()))
            .and_then(|jac| taylor_test(|w| Ok(p.residual(&ControlVector(w.clone()))?.0), &jac, &v, &dv, &TAYLOR_EPS))
    };
    out.push(taylor_outcome("residual Jacobian over the window (Taylor)", residual_result));
    let mutant = stale_stage_tlm(&cfg.spec, &x)
        .map_err(AssimError::from)
        .and_then(|m| step_taylor(&cfg.spec, &m, &x, &d));
    out.push(match mutant {
        Ok(r) => CheckOutcome::new(
            "corrupted TLM is detected",
            !r.passed(),
            format!("stale-stage TLM ratios {}", fmt_ratios(&r.ratios)),
        ),
        Err(e) => CheckOutcome::new("corrupted TLM is detected", false, e.to_string()),
    });

    // smallest eigenvalue of J^T J
    let mut lowest = f64::INFINITY;
    for p in &problems {
        let v = random_vector(n, &mut rng);
        match p.gn_hessian_spectrum(&ControlVector(v)) {
            Ok((lo, _)) if lo.is_finite() => lowest = lowest.min(lo),
            _ => {
                lowest = f64::NAN;
                break;
            }
        }
    }
    out.push(CheckOutcome::new(
        "Gauss-Newton Hessian eigenvalues >= 1",
        lowest >= 1.0 - EIG_TOL,
        format!("min eigenvalue {lowest:.12} (tolerance 1 - {EIG_TOL:.0e})"),
    ));

    // affine problem
    out.push(match affine_problem(cfg, 0).and_then(|p| affine_report(&p)) {
        Ok(r) => CheckOutcome::new(
            "affine problem solved exactly",
            r.passed(),
            format!(
                "GN after one step {:.2e}, LS {:.2e} (unit step accepted: {}), REG {:.2e} (tolerance {AFFINE_TOL:.0e})",
                r.gn_one_step, r.ls, r.ls_unit_step_accepted, r.reg
            ),
        ),
        Err(e) => CheckOutcome::new("affine problem solved exactly", false, e),
    });

    // trace audits over the configured ensemble
    out.push(match audit_ensemble(cfg) {
        Ok(a) => CheckOutcome::new(
            "Armijo, ratio, monotonicity and budget audit",
            a.passed(),
            if a.passed() {
                format!(
                    "{} LS and {} REG accepted steps over {} realizations",
                    a.armijo_checked, a.rho_checked, cfg.n_r
                )
            } else {
                format!("{} violations, first: {}", a.violations.len(), a.violations[0])
            },
        ),
        Err(e) => CheckOutcome::new("Armijo, ratio, monotonicity and budget audit", false, e.to_string()),
    });
    out
}

fn fmt_ratios(r: &[f64]) -> String {
    let parts: Vec<String> = r.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn taylor_outcome(name: &str, report: Result<TaylorReport, AssimError>) -> CheckOutcome {
    match report {
        Ok(r) if r.is_exact() => CheckOutcome::new(
            name,
            true,
            format!("linear along the direction; max remainder {:.1e}", r.remainders.iter().cloned().fold(0.0, f64::max)),
        ),
        Ok(r) => CheckOutcome::new(
            name,
            r.passed(),
            format!(
                "ratios {} (need {TAYLOR_RUN} consecutive in [{}, {}])",
                fmt_ratios(&r.ratios),
                TAYLOR_BAND.0,
                TAYLOR_BAND.1
            ),
        ),
        Err(e) => CheckOutcome::new(name, false, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lorenz63_suite_passes() {
        let mut cfg = TwinConfig::lorenz63(1.0);
        cfg.n_r = 10;
        for o in run_checks(&cfg, 5) {
            assert!(o.passed, "{o}");
        }
    }

    #[test]
    fn suite_without_observations_passes() {
        let mut cfg = TwinConfig::lorenz96(0.1);
        cfg.layout = ObsLayout::NoObs;
        cfg.n_r = 3;
        let outcomes = run_checks(&cfg, 2);
        assert!(outcomes.iter().any(|o| o.name.contains("without observations")));
        for o in outcomes {
            assert!(o.passed, "{o}");
        }
    }

    #[test]
    fn stale_tlm_equals_true_tlm_for_linear_rhs() {
        // at the L96 equilibrium all stage arguments coincide
        let spec = ModelSpec::lorenz96();
        let x = DVector::from_element(40, 8.0);
        let a = stale_stage_tlm(&spec, &x).unwrap();
        let b = spec.step_tlm(&x).unwrap();
        assert!((a - b).amax() < 1e-14);
    }
}
