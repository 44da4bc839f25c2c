//! Twin experiments: reference spin-up, noisy background and observations,
//! and budgeted execution of all three solvers on identical realizations.
//!
//! Randomness is drawn from ChaCha8 streams keyed by `(base_seed, index, tag)`,
//! so every realization can be generated independently of the others and
//! the ensemble result does not depend on execution order.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assim::{AssimError, AssimilationProblem, ControlVector, ObservationEntry, ObservationSet};
use crate::models::{ModelError, ModelKind, ModelSpec, StateVector, Trajectory};
use crate::profiles::analysis_rmse;
use crate::solvers::{solve, Method, SolverError, SolverOptions, SolverTrace, StopReason, TraceAudit};

/// Number of steps used to spin a random state onto the attractor.
pub const SPIN_UP_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Assim(#[from] AssimError),
}

/// Placement of observation times in a window of `N` steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsLayout {
    /// No observations; the cost is the background term only.
    #[serde(rename = "none")]
    NoObs,
    /// `{N}`
    #[default]
    Nobs1,
    /// `{N/2, N}`
    Nobs2,
    /// `{N/4, N/2, 3N/4, N}`
    Nobs3,
    /// Every even step `{2, 4, ..., N}`.
    Nobs4,
}

impl ObsLayout {
    pub fn steps(self, n_steps: usize) -> Result<Vec<usize>, ConfigError> {
        let need = |divisor: usize| {
            if n_steps == 0 || n_steps % divisor != 0 {
                Err(ConfigError::Invalid(format!(
                    "layout {self:?} needs a window length divisible by {divisor}, got N = {n_steps}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            ObsLayout::NoObs => Ok(Vec::new()),
            ObsLayout::Nobs1 => {
                need(1)?;
                Ok(vec![n_steps])
            }
            ObsLayout::Nobs2 => {
                need(2)?;
                Ok(vec![n_steps / 2, n_steps])
            }
            ObsLayout::Nobs3 => {
                need(4)?;
                Ok((1..=4).map(|q| q * n_steps / 4).collect())
            }
            ObsLayout::Nobs4 => {
                need(2)?;
                Ok((1..=n_steps / 2).map(|h| 2 * h).collect())
            }
        }
    }
}

/// Whether the reference state is shared by all realizations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// One reference per configuration; realizations differ in noise only.
    #[default]
    Fixed,
    PerRealization,
}

/// Independent random streams of one realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Reference = 0,
    Background = 1,
    Observation = 2,
}

/// Generator for stream `tag` of realization `index`.
pub fn stream_rng(base_seed: u64, index: u64, tag: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream((index << 8) | tag as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinConfig {
    pub spec: ModelSpec,
    /// Window length in model time units.
    pub t_a: f64,
    pub var_b: f64,
    pub var_o: f64,
    pub layout: ObsLayout,
    pub components: Vec<usize>,
    pub n_r: usize,
    pub base_seed: u64,
    pub reference: ReferenceMode,
    pub methods: Vec<Method>,
    pub solver: SolverOptions,
    pub workers: usize,
}

impl TwinConfig {
    /// Lorenz-63 setup: x and z observed, `var_o = 1`, 50% background error.
    pub fn lorenz63(t_a: f64) -> Self {
        Self {
            spec: ModelSpec::lorenz63(),
            t_a,
            var_b: 25.0,
            var_o: 1.0,
            layout: ObsLayout::Nobs1,
            components: vec![0, 2],
            n_r: 100,
            base_seed: 20_210_601,
            reference: ReferenceMode::Fixed,
            methods: Method::ALL.to_vec(),
            solver: SolverOptions::default(),
            workers: 0,
        }
    }

    /// Lorenz-96 setup: first half of the state observed, `var_o = 0.25`,
    /// 50% background error.
    pub fn lorenz96(t_a: f64) -> Self {
        let spec = ModelSpec::lorenz96();
        let half = spec.n / 2;
        Self {
            spec,
            var_b: 6.25,
            var_o: 0.25,
            components: (0..half).collect(),
            ..Self::lorenz63(t_a)
        }
    }

    /// Default observed components for a model.
    pub fn default_components(spec: &ModelSpec) -> Vec<usize> {
        match spec.kind {
            ModelKind::Lorenz63 { .. } => vec![0, 2],
            ModelKind::Lorenz96 { .. } => (0..spec.n / 2).collect(),
        }
    }

    /// Window length `N = t_a / dt` in steps.
    pub fn window_steps(&self) -> Result<usize, ConfigError> {
        let ratio = self.t_a / self.spec.dt;
        let rounded = ratio.round();
        if !(ratio.is_finite() && rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0)) {
            return Err(ConfigError::Invalid(format!(
                "t_a / dt = {} / {} is not a positive integer",
                self.t_a, self.spec.dt
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.spec.validate()?;
        let n_steps = self.window_steps()?;
        self.layout.steps(n_steps)?;
        for (name, value) in [("var_b", self.var_b), ("var_o", self.var_o)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {value}")));
            }
        }
        if self.layout != ObsLayout::NoObs && self.components.is_empty() {
            return Err(ConfigError::Invalid("no observed components".into()));
        }
        if let Some(c) = self.components.iter().find(|&&c| c >= self.spec.n) {
            return Err(ConfigError::Invalid(format!(
                "observed component {c} outside state of dimension {}",
                self.spec.n
            )));
        }
        if self.n_r == 0 {
            return Err(ConfigError::Invalid("n_r must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(ConfigError::Invalid("no solver methods selected".into()));
        }
        self.solver.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

/// One randomly generated 4D-Var problem of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub index: usize,
    pub x_ref: StateVector,
    pub x_b: StateVector,
    pub obs: ObservationSet,
}

/// Draws `x ~ U(0, 1)^n` and spins it up for [`SPIN_UP_STEPS`] steps.
pub fn make_reference<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Result<StateVector, ModelError> {
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let x_rand = DVector::from_iterator(spec.n, (0..spec.n).map(|_| rng.sample(unit)));
    Ok(spec.propagate(&x_rand, SPIN_UP_STEPS)?.last().clone())
}

/// `x_b = x_ref + sigma_b z` with `z` standard normal.
pub fn make_background<R: Rng>(x_ref: &StateVector, var_b: f64, rng: &mut R) -> StateVector {
    let sigma_b = var_b.sqrt();
    x_ref.map(|x| x + sigma_b * rng.sample::<f64, _>(StandardNormal))
}

/// Noisy observations of `components` at the layout's steps along `traj`.
pub fn make_observations<R: Rng>(
    traj: &Trajectory,
    layout: ObsLayout,
    components: &[usize],
    var_o: f64,
    rng: &mut R,
) -> Result<ObservationSet, ConfigError> {
    let steps = layout.steps(traj.steps())?;
    let sigma_o = var_o.sqrt();
    let n = traj.initial().len();
    let entries = steps
        .into_iter()
        .map(|step| {
            let x = &traj.states[step];
            let values = DVector::from_iterator(
                components.len(),
                components.iter().map(|&c| x[c] + sigma_o * rng.sample::<f64, _>(StandardNormal)),
            );
            ObservationEntry { step, components: components.to_vec(), values, var_o }
        })
        .collect();
    Ok(ObservationSet::new(entries, n)?)
}

/// Reference state shared by every realization in [`ReferenceMode::Fixed`].
pub fn fixed_reference(cfg: &TwinConfig) -> Result<StateVector, ModelError> {
    make_reference(&cfg.spec, &mut stream_rng(cfg.base_seed, 0, Stream::Reference))
}

/// Builds realization `index`. `shared_reference` is used in fixed mode.
pub fn make_realization(
    cfg: &TwinConfig,
    index: usize,
    shared_reference: Option<&StateVector>,
) -> Result<Realization, ConfigError> {
    let n_steps = cfg.window_steps()?;
    let x_ref = match (cfg.reference, shared_reference) {
        (ReferenceMode::Fixed, Some(x)) => x.clone(),
        (ReferenceMode::Fixed, None) => fixed_reference(cfg)?,
        (ReferenceMode::PerRealization, _) => make_reference(
            &cfg.spec,
            &mut stream_rng(cfg.base_seed, index as u64 + 1, Stream::Reference),
        )?,
    };
    let x_b = make_background(&x_ref, cfg.var_b, &mut stream_rng(cfg.base_seed, index as u64, Stream::Background));
    let traj = cfg.spec.propagate(&x_ref, n_steps)?;
    let obs = make_observations(
        &traj,
        cfg.layout,
        &cfg.components,
        cfg.var_o,
        &mut stream_rng(cfg.base_seed, index as u64, Stream::Observation),
    )?;
    Ok(Realization { index, x_ref, x_b, obs })
}

/// Outcome of one method on one realization; the row unit of result tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResultRow {
    pub seed_index: usize,
    pub method: Method,
    pub function_evals: usize,
    pub jacobian_evals: usize,
    pub cost_final: f64,
    pub cost_best: f64,
    pub grad_norm_final: f64,
    pub step_norm_final: f64,
    /// RMSE of the best iterate against the reference state.
    pub rmse: f64,
    pub stop_reason: StopReason,
    /// Cost at the background, common to all methods.
    pub cost_initial: f64,
}

pub type ResultTable = Vec<EnsembleResultRow>;

/// Traces of every configured method on one realization. A solver error
/// affects only its own method.
#[derive(Debug, Clone)]
pub struct RealizationRun {
    pub realization: Realization,
    pub cost_initial: f64,
    pub sigma_b: f64,
    pub outcomes: Vec<(Method, Result<SolverTrace, SolverError>)>,
}

impl RealizationRun {
    pub fn rows(&self) -> Vec<EnsembleResultRow> {
        self.outcomes
            .iter()
            .map(|(method, outcome)| match outcome {
                Ok(trace) => {
                    let x_best = &self.realization.x_b + &trace.best_v * self.sigma_b;
                    EnsembleResultRow {
                        seed_index: self.realization.index,
                        method: *method,
                        function_evals: trace.function_evals,
                        jacobian_evals: trace.jacobian_evals,
                        cost_final: trace.final_cost,
                        cost_best: trace.best_cost,
                        grad_norm_final: trace.final_grad_norm,
                        step_norm_final: trace.final_step_norm,
                        rmse: analysis_rmse(&x_best, &self.realization.x_ref),
                        stop_reason: trace.stop_reason,
                        cost_initial: self.cost_initial,
                    }
                }
                Err(_) => failed_row(self.realization.index, *method, self.cost_initial),
            })
            .collect()
    }
}

fn failed_row(seed_index: usize, method: Method, cost_initial: f64) -> EnsembleResultRow {
    EnsembleResultRow {
        seed_index,
        method,
        function_evals: 0,
        jacobian_evals: 0,
        cost_final: f64::NAN,
        cost_best: f64::NAN,
        grad_norm_final: f64::NAN,
        step_norm_final: f64::NAN,
        rmse: f64::NAN,
        stop_reason: StopReason::NonFinite,
        cost_initial,
    }
}

/// Runs every configured method from `v0 = 0` (the background) on one problem.
pub fn solve_realization(cfg: &TwinConfig, realization: Realization) -> Result<RealizationRun, ConfigError> {
    let problem = AssimilationProblem::new(
        cfg.spec.clone(),
        cfg.window_steps()?,
        realization.x_b.clone(),
        cfg.var_b,
        realization.obs.clone(),
    )?;
    let cost_initial = problem.cost(&ControlVector::zeros(cfg.spec.n)).unwrap_or(f64::NAN);
    let v0 = DVector::zeros(cfg.spec.n);
    let outcomes = cfg.methods.iter().map(|&m| (m, solve(&problem, &v0, m, &cfg.solver))).collect();
    Ok(RealizationRun { realization, cost_initial, sigma_b: problem.sigma_b(), outcomes })
}

/// Result rows of [`solve_realization`].
pub fn run_realization(cfg: &TwinConfig, realization: &Realization) -> Result<Vec<EnsembleResultRow>, ConfigError> {
    Ok(solve_realization(cfg, realization.clone())?.rows())
}

/// Runs `n_r` realizations, in parallel when `workers != 1`, and returns the
/// rows sorted by realization index then method.
pub fn run_ensemble(cfg: &TwinConfig) -> Result<ResultTable, ConfigError> {
    run_ensemble_indices(cfg, &(0..cfg.n_r).collect::<Vec<_>>())
}

/// Like [`run_ensemble`] for an explicit list of realization indices, in
/// the order given. A realization whose generation fails yields failed rows.
pub fn run_ensemble_indices(cfg: &TwinConfig, indices: &[usize]) -> Result<ResultTable, ConfigError> {
    let runs = map_realizations(cfg, indices, |r| r.rows())?;
    let mut rows: ResultTable = runs
        .into_iter()
        .zip(indices)
        .flat_map(|(run, &index)| match run {
            Some(rows) => rows,
            None => cfg.methods.iter().map(|&m| failed_row(index, m, f64::NAN)).collect(),
        })
        .collect();
    rows.sort_by_key(|r| (r.seed_index, r.method));
    Ok(rows)
}

/// Audits every solver trace of the ensemble (see [`SolverTrace::audit`]).
pub fn audit_ensemble(cfg: &TwinConfig) -> Result<TraceAudit, ConfigError> {
    let indices: Vec<usize> = (0..cfg.n_r).collect();
    let audits = map_realizations(cfg, &indices, |run| {
        let mut audit = TraceAudit::default();
        for (_, outcome) in &run.outcomes {
            match outcome {
                Ok(trace) => audit.merge(trace.audit(&cfg.solver)),
                Err(e) => audit.violations.push(format!("realization {}: {e}", run.realization.index)),
            }
        }
        audit
    })?;
    let mut total = TraceAudit::default();
    for a in audits.into_iter().flatten() {
        total.merge(a);
    }
    Ok(total)
}

/// Applies `f` to each realization run on the worker pool; `None` marks a
/// realization that could not be generated.
fn map_realizations<T, F>(cfg: &TwinConfig, indices: &[usize], f: F) -> Result<Vec<Option<T>>, ConfigError>
where
    T: Send,
    F: Fn(&RealizationRun) -> T + Sync,
{
    cfg.validate()?;
    let shared = match cfg.reference {
        ReferenceMode::Fixed => Some(fixed_reference(cfg)?),
        ReferenceMode::PerRealization => None,
    };
    let one = |index: usize| -> Option<T> {
        let realization = make_realization(cfg, index, shared.as_ref()).ok()?;
        solve_realization(cfg, realization).ok().map(|run| f(&run))
    };
    if cfg.workers == 1 {
        return Ok(indices.iter().map(|&i| one(i)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| indices.par_iter().map(|&i| one(i)).collect()))
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn layout_steps() {
        assert_eq!(ObsLayout::Nobs1.steps(40).unwrap(), vec![40]);
        assert_eq!(ObsLayout::Nobs2.steps(40).unwrap(), vec![20, 40]);
        assert_eq!(ObsLayout::Nobs3.steps(40).unwrap(), vec![10, 20, 30, 40]);
        let nobs4 = ObsLayout::Nobs4.steps(40).unwrap();
        assert_eq!(nobs4.len(), 20);
        assert_eq!(nobs4.first(), Some(&2));
        assert_eq!(nobs4.last(), Some(&40));
        assert!(ObsLayout::Nobs3.steps(2).is_err());
        assert!(ObsLayout::Nobs2.steps(3).is_err());
        assert!(ObsLayout::NoObs.steps(3).unwrap().is_empty());
    }

    #[test]
    fn window_steps_must_be_integral() {
        assert_eq!(TwinConfig::lorenz63(1.0).window_steps().unwrap(), 40);
        assert_eq!(TwinConfig::lorenz63(0.05).window_steps().unwrap(), 2);
        assert!(TwinConfig::lorenz63(0.03).window_steps().is_err());
        assert!(TwinConfig::lorenz63(0.0).window_steps().is_err());
    }

    #[test]
    fn reference_is_deterministic_and_on_attractor() {
        let spec = ModelSpec::lorenz63();
        for seed in 0..20 {
            let a = make_reference(&spec, &mut stream_rng(seed, 0, Stream::Reference)).unwrap();
            let b = make_reference(&spec, &mut stream_rng(seed, 0, Stream::Reference)).unwrap();
            assert_eq!(a, b);
            assert!(a[0].abs() <= 25.0 && a[1].abs() <= 30.0 && a[2] >= 0.0 && a[2] <= 50.0, "{a}");
        }
    }

    #[test]
    fn lorenz96_climate_mean() {
        // long-run time mean of the components sits near 2.3
        let spec = ModelSpec::lorenz96();
        let mut x = make_reference(&spec, &mut stream_rng(3, 0, Stream::Reference)).unwrap();
        let mut sum = 0.0;
        let steps = 4000;
        for _ in 0..steps {
            x = spec.step(&x).unwrap();
            sum += x.mean();
        }
        let mean = sum / steps as f64;
        assert!((mean - 2.3).abs() <= 1.0, "mean {mean}");
    }

    #[test]
    fn background_noise_statistics() {
        let x_ref = DVector::zeros(4);
        let var_b = 6.25;
        let mut rng = stream_rng(99, 0, Stream::Background);
        let draws: Vec<StateVector> = (0..10_000).map(|_| make_background(&x_ref, var_b, &mut rng)).collect();
        for c in 0..4 {
            let mean = draws.iter().map(|d| d[c]).sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|d| (d[c] - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
            assert!((var / var_b - 1.0).abs() < 0.05, "component {c}: {var}");
        }
        let tiny = make_background(&DVector::from_element(3, 1.0), 0.0, &mut rng);
        assert_eq!(tiny, DVector::from_element(3, 1.0));
    }

    #[test]
    fn background_scales_shared_draws() {
        let x_ref = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = make_background(&x_ref, 1.0, &mut stream_rng(5, 7, Stream::Background));
        let b = make_background(&x_ref, 4.0, &mut stream_rng(5, 7, Stream::Background));
        assert_relative_eq!(&b - &x_ref, (&a - &x_ref) * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn streams_are_independent() {
        let mut b = stream_rng(1, 0, Stream::Background);
        let mut o = stream_rng(1, 0, Stream::Observation);
        let mut b1 = stream_rng(1, 1, Stream::Background);
        let xb: f64 = b.random();
        assert_ne!(xb, o.random::<f64>());
        assert_ne!(xb, b1.random::<f64>());
    }

    #[test]
    fn nobs4_counts_match_jacobian() {
        let mut cfg = TwinConfig::lorenz96(1.0);
        cfg.layout = ObsLayout::Nobs4;
        let real = make_realization(&cfg, 0, None).unwrap();
        assert_eq!(real.obs.entries().len(), 20);
        assert_eq!(real.obs.total(), 20 * 20);
        let prob = AssimilationProblem::new(cfg.spec.clone(), 40, real.x_b.clone(), cfg.var_b, real.obs).unwrap();
        let jac = prob.jacobian(&crate::assim::ControlVector::zeros(40)).unwrap();
        assert_eq!(jac.nrows(), 40 + 400);
        assert_eq!(prob.residual_len(), jac.nrows());
    }

    #[test]
    fn zero_noise_realization_stops_immediately() {
        let cfg = TwinConfig::lorenz63(1.0);
        let x_ref = fixed_reference(&cfg).unwrap();
        let traj = cfg.spec.propagate(&x_ref, 40).unwrap();
        let entries = vec![ObservationEntry {
            step: 40,
            components: vec![0, 2],
            values: DVector::from_vec(vec![traj.states[40][0], traj.states[40][2]]),
            var_o: 1.0,
        }];
        let real = Realization { index: 0, x_ref: x_ref.clone(), x_b: x_ref, obs: ObservationSet::new(entries, 3).unwrap() };
        let rows = run_realization(&cfg, &real).unwrap();
        assert_eq!(rows.len(), 3);
        for row in rows {
            assert_eq!(row.cost_best, 0.0);
            assert_eq!(row.function_evals, 1);
            assert_eq!(row.jacobian_evals, 1);
            assert_eq!(row.stop_reason, StopReason::GradNorm);
        }
    }

    #[test]
    fn methods_share_initial_cost() {
        let mut cfg = TwinConfig::lorenz63(1.0);
        cfg.n_r = 3;
        let rows = run_ensemble(&cfg).unwrap();
        assert_eq!(rows.len(), 9);
        for chunk in rows.chunks(3) {
            assert!(chunk.iter().all(|r| r.cost_initial == chunk[0].cost_initial));
            assert_eq!(chunk.iter().map(|r| r.method).collect::<Vec<_>>(), Method::ALL.to_vec());
        }
    }

    #[test]
    fn order_and_workers_do_not_change_results() {
        let mut cfg = TwinConfig::lorenz63(1.0);
        cfg.n_r = 6;
        cfg.workers = 1;
        let serial = run_ensemble(&cfg).unwrap();
        cfg.workers = 3;
        let shuffled = run_ensemble_indices(&cfg, &[4, 1, 5, 0, 3, 2]).unwrap();
        assert_eq!(serial, shuffled);
        cfg.n_r = 1;
        let single = run_ensemble(&cfg).unwrap();
        let real = make_realization(&cfg, 0, None).unwrap();
        assert_eq!(single, run_realization(&cfg, &real).unwrap());
    }
}
