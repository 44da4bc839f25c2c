//! The preconditioned strong-constraint 4D-Var problem.
//!
//! With `B = var_b * I` and `R_i = var_o * I`, the control variable is
//! `v = (x0 - xb) / sigma_b` and the cost is `J(v) = 0.5 * |r(v)|^2` where
//!
//! ```text
//! r(v) = [ v ; (y_i - H_i M_{0,i}(sigma_b v + xb)) / sigma_o  for each observation time i ]
//! J(v) = [ I ; -(sigma_b / sigma_o) H_i M_{0,i}                 for each observation time i ]
//! ```
//!
//! `H_i` is a row selection of the state, so observation operators are exact
//! and linear. Jacobians are assembled densely.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::models::{ModelError, ModelSpec, StateVector, Trajectory};
use crate::solvers::LeastSquaresProblem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid observations: {0}")]
    InvalidObservations(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
}

/// Observations of selected state components at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEntry {
    pub step: usize,
    /// State indices selected by `H_i`, in the order of `values`.
    pub components: Vec<usize>,
    pub values: DVector<f64>,
    /// Observation error variance `sigma_o^2`.
    pub var_o: f64,
}

impl ObservationEntry {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Observation entries ordered by strictly increasing step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    entries: Vec<ObservationEntry>,
}

impl ObservationSet {
    /// Validates and sorts `entries` by step. `n` is the model state dimension.
    pub fn new(mut entries: Vec<ObservationEntry>, n: usize) -> Result<Self, AssimError> {
        entries.sort_by_key(|e| e.step);
        for pair in entries.windows(2) {
            if pair[0].step == pair[1].step {
                return Err(AssimError::InvalidObservations(format!(
                    "duplicate observation step {}",
                    pair[0].step
                )));
            }
        }
        for e in &entries {
            if e.components.is_empty() {
                return Err(AssimError::InvalidObservations(format!(
                    "entry at step {} observes no components",
                    e.step
                )));
            }
            if e.components.len() != e.values.len() {
                return Err(AssimError::InvalidObservations(format!(
                    "entry at step {} has {} components but {} values",
                    e.step,
                    e.components.len(),
                    e.values.len()
                )));
            }
            if let Some(&c) = e.components.iter().find(|&&c| c >= n) {
                return Err(AssimError::InvalidObservations(format!(
                    "component {c} out of range for state dimension {n}"
                )));
            }
            let mut sorted = e.components.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != e.components.len() {
                return Err(AssimError::InvalidObservations(format!(
                    "entry at step {} repeats a component",
                    e.step
                )));
            }
            if !(e.var_o > 0.0 && e.var_o.is_finite()) {
                return Err(AssimError::InvalidObservations(format!(
                    "observation variance must be positive, got {}",
                    e.var_o
                )));
            }
            if !e.values.iter().all(|y| y.is_finite()) {
                return Err(AssimError::InvalidObservations(format!(
                    "non-finite observation value at step {}",
                    e.step
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[ObservationEntry] {
        &self.entries
    }

    /// Total number of scalar observations `p`.
    pub fn total(&self) -> usize {
        self.entries.iter().map(ObservationEntry::len).sum()
    }

    pub fn steps(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.step).collect()
    }

    pub fn last_step(&self) -> Option<usize> {
        self.entries.last().map(|e| e.step)
    }
}

/// Control vector `v = B^{-1/2} (x0 - xb)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector(pub DVector<f64>);

impl ControlVector {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl From<DVector<f64>> for ControlVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

/// One strong-constraint 4D-Var problem over a window of `steps` model steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AssimilationProblem {
    spec: ModelSpec,
    steps: usize,
    background: StateVector,
    var_b: f64,
    obs: ObservationSet,
}

impl AssimilationProblem {
    pub fn new(
        spec: ModelSpec,
        steps: usize,
        background: StateVector,
        var_b: f64,
        obs: ObservationSet,
    ) -> Result<Self, AssimError> {
        spec.validate()?;
        if background.len() != spec.n {
            return Err(AssimError::DimensionMismatch { expected: spec.n, got: background.len() });
        }
        if !(var_b > 0.0 && var_b.is_finite()) {
            return Err(AssimError::InvalidProblem(format!(
                "background variance must be positive, got {var_b}"
            )));
        }
        if let Some(last) = obs.last_step() {
            if last > steps {
                return Err(AssimError::InvalidProblem(format!(
                    "observation at step {last} lies beyond the window of {steps} steps"
                )));
            }
        }
        if let Some(e) = obs.entries().iter().find(|e| e.components.iter().any(|&c| c >= spec.n)) {
            return Err(AssimError::InvalidObservations(format!(
                "entry at step {} selects a component outside the state",
                e.step
            )));
        }
        Ok(Self { spec, steps, background, var_b, obs })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Window length in model steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn background(&self) -> &StateVector {
        &self.background
    }

    pub fn var_b(&self) -> f64 {
        self.var_b
    }

    pub fn sigma_b(&self) -> f64 {
        self.var_b.sqrt()
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.obs
    }

    /// Length of the stacked residual, `n + p`.
    pub fn residual_len(&self) -> usize {
        self.n() + self.obs.total()
    }

    fn check_control(&self, v: &DVector<f64>) -> Result<(), AssimError> {
        if v.len() == self.n() {
            Ok(())
        } else {
            Err(AssimError::DimensionMismatch { expected: self.n(), got: v.len() })
        }
    }

    /// `x0 = sigma_b v + xb`.
    pub fn control_to_state(&self, v: &ControlVector) -> Result<StateVector, AssimError> {
        self.check_control(&v.0)?;
        Ok(self.state_of(&v.0))
    }

    fn state_of(&self, v: &DVector<f64>) -> StateVector {
        let mut x0 = self.background.clone();
        x0.axpy(self.sigma_b(), v, 1.0);
        x0
    }

    /// `v = (x0 - xb) / sigma_b`.
    pub fn state_to_control(&self, x0: &StateVector) -> Result<ControlVector, AssimError> {
        if x0.len() != self.n() {
            return Err(AssimError::DimensionMismatch { expected: self.n(), got: x0.len() });
        }
        Ok(ControlVector((x0 - &self.background) / self.sigma_b()))
    }

    /// Model run needed to evaluate the residual at `v`. Only as long as the
    /// last observation requires.
    pub fn trajectory(&self, v: &ControlVector) -> Result<Trajectory, AssimError> {
        self.check_control(&v.0)?;
        self.trajectory_of(&v.0)
    }

    fn trajectory_of(&self, v: &DVector<f64>) -> Result<Trajectory, AssimError> {
        let horizon = self.obs.last_step().unwrap_or(0);
        Ok(self.spec.propagate(&self.state_of(v), horizon)?)
    }

    /// Stacked residual and the trajectory it was computed from.
    pub fn residual(&self, v: &ControlVector) -> Result<(DVector<f64>, Trajectory), AssimError> {
        self.check_control(&v.0)?;
        let traj = self.trajectory_of(&v.0)?;
        Ok((self.residual_from(&v.0, &traj), traj))
    }

    fn residual_from(&self, v: &DVector<f64>, traj: &Trajectory) -> DVector<f64> {
        let mut r = DVector::zeros(self.residual_len());
        r.rows_mut(0, self.n()).copy_from(v);
        let mut row = self.n();
        for e in self.obs.entries() {
            let inv_sigma_o = 1.0 / e.var_o.sqrt();
            let x = &traj.states[e.step];
            for (&c, y) in e.components.iter().zip(e.values.iter()) {
                r[row] = (y - x[c]) * inv_sigma_o;
                row += 1;
            }
        }
        r
    }

    /// `J(v) = 0.5 |r(v)|^2`.
    pub fn cost(&self, v: &ControlVector) -> Result<f64, AssimError> {
        let (r, _) = self.residual(v)?;
        Ok(0.5 * r.norm_squared())
    }

    /// Dense `(n + p) x n` Jacobian of the residual at `v`.
    pub fn jacobian(&self, v: &ControlVector) -> Result<DMatrix<f64>, AssimError> {
        let (_, traj) = self.residual(v)?;
        self.jacobian_from(&traj)
    }

    /// Jacobian assembled along an already computed trajectory.
    pub fn jacobian_from(&self, traj: &Trajectory) -> Result<DMatrix<f64>, AssimError> {
        let n = self.n();
        let mut jac = DMatrix::zeros(self.residual_len(), n);
        jac.view_mut((0, 0), (n, n)).fill_with_identity();
        let steps = self.obs.steps();
        let tlms = self.spec.propagate_tlm_many(traj, &steps)?;
        let mut row = n;
        for (e, m) in self.obs.entries().iter().zip(&tlms) {
            let scale = -self.sigma_b() / e.var_o.sqrt();
            for &c in &e.components {
                jac.row_mut(row).copy_from(&(m.row(c) * scale));
                row += 1;
            }
        }
        if jac.iter().all(|x| x.is_finite()) {
            Ok(jac)
        } else {
            Err(ModelError::NonFiniteState { step: traj.steps() }.into())
        }
    }

    /// `grad J(v) = J(v)^T r(v)`.
    pub fn gradient(&self, v: &ControlVector) -> Result<DVector<f64>, AssimError> {
        let (r, traj) = self.residual(v)?;
        let jac = self.jacobian_from(&traj)?;
        Ok(jac.tr_mul(&r))
    }

    /// Gauss-Newton Hessian `S = J^T J`.
    pub fn gn_hessian(&self, v: &ControlVector) -> Result<DMatrix<f64>, AssimError> {
        let jac = self.jacobian(v)?;
        Ok(jac.tr_mul(&jac))
    }

    /// Smallest and largest eigenvalue of `J^T J`, taken as the squared
    /// extreme singular values of `J` so that the lower end is not lost to
    /// rounding when the spectrum is wide.
    pub fn gn_hessian_spectrum(&self, v: &ControlVector) -> Result<(f64, f64), AssimError> {
        let jac = self.jacobian(v)?;
        let sv = jac.singular_values();
        Ok((sv.min().powi(2), sv.max().powi(2)))
    }
}

impl LeastSquaresProblem for AssimilationProblem {
    type Cache = Trajectory;
    type Error = AssimError;

    fn n_params(&self) -> usize {
        self.n()
    }

    fn residual(&self, v: &DVector<f64>) -> Result<(DVector<f64>, Trajectory), AssimError> {
        self.check_control(v)?;
        let traj = self.trajectory_of(v)?;
        Ok((self.residual_from(v, &traj), traj))
    }

    fn jacobian(&self, _v: &DVector<f64>, traj: &Trajectory) -> Result<DMatrix<f64>, AssimError> {
        self.jacobian_from(traj)
    }
}

/// Spectral condition number `lambda_max / lambda_min` of a symmetric
/// positive definite matrix.
pub fn condition_number(s: &DMatrix<f64>) -> Result<f64, AssimError> {
    let (lo, hi) = extreme_eigenvalues(s)?;
    if lo <= 0.0 {
        return Err(AssimError::NotPositiveDefinite(lo));
    }
    Ok(hi / lo)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn extreme_eigenvalues(s: &DMatrix<f64>) -> Result<(f64, f64), AssimError> {
    if !s.is_square() {
        return Err(AssimError::DimensionMismatch { expected: s.nrows(), got: s.ncols() });
    }
    let asym = (s - s.transpose()).amax();
    if asym > 1e-10 * s.amax().max(1.0) {
        return Err(AssimError::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(s.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    Ok((lo, hi))
}
