//! Lorenz-63 and Lorenz-96 dynamics, explicit Runge-Kutta stepping and the
//! exact tangent linear model of the discrete scheme.
//!
//! The tangent linear model is obtained by differentiating the Runge-Kutta
//! stages themselves, so `step_tlm(x)` is the Jacobian of `step(x)` up to
//! rounding. Every function here is pure and thread-safe.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Model state vector.
pub type StateVector = DVector<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state produced at step {step}")]
    NonFiniteState { step: usize },
    #[error("step index {index} out of range for a trajectory of {steps} steps")]
    IndexOutOfRange { index: usize, steps: usize },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
}

/// Which right-hand side is integrated, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Lorenz96 { forcing: f64 },
}

/// Second-order Runge-Kutta variant used for Lorenz-63.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rk2Variant {
    /// Explicit trapezoidal rule.
    #[default]
    Heun,
    Midpoint,
}

/// Explicit Runge-Kutta scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Rk2(Rk2Variant),
    Rk4,
}

/// Butcher tableau of an explicit scheme: strictly lower-triangular `a`,
/// weights `b`.
struct Tableau {
    a: &'static [&'static [f64]],
    b: &'static [f64],
}

const HEUN: Tableau = Tableau {
    a: &[&[], &[1.0]],
    b: &[0.5, 0.5],
};

const MIDPOINT: Tableau = Tableau {
    a: &[&[], &[0.5]],
    b: &[0.0, 1.0],
};

const CLASSIC_RK4: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
};

impl Scheme {
    fn tableau(self) -> &'static Tableau {
        match self {
            Scheme::Rk2(Rk2Variant::Heun) => &HEUN,
            Scheme::Rk2(Rk2Variant::Midpoint) => &MIDPOINT,
            Scheme::Rk4 => &CLASSIC_RK4,
        }
    }

    /// Stability polynomial `R(z) = 1 + z + ...` coefficients, lowest order first.
    pub fn polynomial(self) -> &'static [f64] {
        match self {
            Scheme::Rk2(_) => &[1.0, 1.0, 0.5],
            Scheme::Rk4 => &[1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0],
        }
    }
}

/// A discretised dynamical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub dt: f64,
    pub scheme: Scheme,
}

pub const DEFAULT_DT: f64 = 0.025;

impl ModelSpec {
    /// Chaotic Lorenz-63 (sigma = 10, rho = 28, beta = 8/3) with Heun RK2.
    pub fn lorenz63() -> Self {
        Self::lorenz63_with(10.0, 28.0, 8.0 / 3.0, Rk2Variant::Heun, DEFAULT_DT)
            .expect("default Lorenz-63 spec is valid")
    }

    pub fn lorenz63_with(
        sigma: f64,
        rho: f64,
        beta: f64,
        rk2: Rk2Variant,
        dt: f64,
    ) -> Result<Self, ModelError> {
        let spec = Self {
            kind: ModelKind::Lorenz63 { sigma, rho, beta },
            n: 3,
            dt,
            scheme: Scheme::Rk2(rk2),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Lorenz-96 with 40 variables, F = 8 and classical RK4.
    pub fn lorenz96() -> Self {
        Self::lorenz96_with(40, 8.0, DEFAULT_DT).expect("default Lorenz-96 spec is valid")
    }

    pub fn lorenz96_with(n: usize, forcing: f64, dt: f64) -> Result<Self, ModelError> {
        let spec = Self {
            kind: ModelKind::Lorenz96 { forcing },
            n,
            dt,
            scheme: Scheme::Rk4,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ModelError::InvalidSpec(format!("dt must be positive, got {}", self.dt)));
        }
        match self.kind {
            ModelKind::Lorenz63 { .. } if self.n != 3 => Err(ModelError::InvalidSpec(format!(
                "Lorenz-63 has 3 variables, got n = {}",
                self.n
            ))),
            ModelKind::Lorenz96 { .. } if self.n < 4 => Err(ModelError::InvalidSpec(format!(
                "Lorenz-96 needs n >= 4, got n = {}",
                self.n
            ))),
            _ => Ok(()),
        }
    }

    fn check_dim(&self, x: &StateVector) -> Result<(), ModelError> {
        if x.len() == self.n {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch { expected: self.n, got: x.len() })
        }
    }

    /// Time derivative at `x`.
    pub fn rhs(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        self.check_dim(x)?;
        Ok(self.rhs_unchecked(x))
    }

    fn rhs_unchecked(&self, x: &StateVector) -> StateVector {
        match self.kind {
            ModelKind::Lorenz63 { sigma, rho, beta } => DVector::from_vec(vec![
                sigma * (x[1] - x[0]),
                x[0] * (rho - x[2]) - x[1],
                x[0] * x[1] - beta * x[2],
            ]),
            ModelKind::Lorenz96 { forcing } => {
                let n = self.n;
                DVector::from_fn(n, |j, _| {
                    let jm2 = (j + n - 2) % n;
                    let jm1 = (j + n - 1) % n;
                    let jp1 = (j + 1) % n;
                    (x[jp1] - x[jm2]) * x[jm1] - x[j] + forcing
                })
            }
        }
    }

    /// Jacobian of the right-hand side, entry `(a, b) = d rhs_a / d x_b`.
    pub fn rhs_jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>, ModelError> {
        self.check_dim(x)?;
        Ok(self.rhs_jacobian_unchecked(x))
    }

    fn rhs_jacobian_unchecked(&self, x: &StateVector) -> DMatrix<f64> {
        match self.kind {
            ModelKind::Lorenz63 { sigma, rho, beta } => DMatrix::from_row_slice(
                3,
                3,
                &[
                    -sigma, sigma, 0.0, //
                    rho - x[2], -1.0, -x[0], //
                    x[1], x[0], -beta,
                ],
            ),
            ModelKind::Lorenz96 { .. } => {
                let n = self.n;
                let mut jac = DMatrix::zeros(n, n);
                for j in 0..n {
                    let jm2 = (j + n - 2) % n;
                    let jm1 = (j + n - 1) % n;
                    let jp1 = (j + 1) % n;
                    jac[(j, jm2)] = -x[jm1];
                    jac[(j, jm1)] = x[jp1] - x[jm2];
                    jac[(j, j)] = -1.0;
                    jac[(j, jp1)] = x[jm1];
                }
                jac
            }
        }
    }

    /// Runge-Kutta stage derivatives `k_i` at `x`.
    fn stages(&self, x: &StateVector) -> Vec<StateVector> {
        let tab = self.scheme.tableau();
        let mut ks: Vec<StateVector> = Vec::with_capacity(tab.b.len());
        for row in tab.a {
            let mut arg = x.clone();
            for (aij, kj) in row.iter().zip(&ks) {
                if *aij != 0.0 {
                    arg.axpy(self.dt * aij, kj, 1.0);
                }
            }
            ks.push(self.rhs_unchecked(&arg));
        }
        ks
    }

    /// One explicit Runge-Kutta step of size `dt`.
    pub fn step(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        self.check_dim(x)?;
        let next = self.step_unchecked(x);
        if next.iter().all(|v| v.is_finite()) {
            Ok(next)
        } else {
            Err(ModelError::NonFiniteState { step: 1 })
        }
    }

    fn step_unchecked(&self, x: &StateVector) -> StateVector {
        let tab = self.scheme.tableau();
        let ks = self.stages(x);
        let mut next = x.clone();
        for (bi, ki) in tab.b.iter().zip(&ks) {
            if *bi != 0.0 {
                next.axpy(self.dt * bi, ki, 1.0);
            }
        }
        next
    }

    /// Exact Jacobian of [`ModelSpec::step`] at `x`, by the chain rule through the stages.
    pub fn step_tlm(&self, x: &StateVector) -> Result<DMatrix<f64>, ModelError> {
        self.check_dim(x)?;
        let m = self.step_tlm_unchecked(x);
        if m.iter().all(|v| v.is_finite()) {
            Ok(m)
        } else {
            Err(ModelError::NonFiniteState { step: 1 })
        }
    }

    fn step_tlm_unchecked(&self, x: &StateVector) -> DMatrix<f64> {
        let tab = self.scheme.tableau();
        let n = self.n;
        let ks = self.stages(x);
        // dk_i = J(arg_i) (I + dt * sum_j a_ij dk_j)
        let mut dks: Vec<DMatrix<f64>> = Vec::with_capacity(ks.len());
        for (i, row) in tab.a.iter().enumerate() {
            let mut arg = x.clone();
            let mut darg = DMatrix::<f64>::identity(n, n);
            for (j, aij) in row.iter().enumerate() {
                if *aij != 0.0 {
                    arg.axpy(self.dt * aij, &ks[j], 1.0);
                    darg += &dks[j] * (self.dt * aij);
                }
            }
            debug_assert_eq!(i, dks.len());
            dks.push(self.rhs_jacobian_unchecked(&arg) * darg);
        }
        let mut m = DMatrix::<f64>::identity(n, n);
        for (bi, dki) in tab.b.iter().zip(&dks) {
            if *bi != 0.0 {
                m += dki * (self.dt * bi);
            }
        }
        m
    }

    /// Integrates `steps` steps from `x0`; `states[0] == x0`.
    pub fn propagate(&self, x0: &StateVector, steps: usize) -> Result<Trajectory, ModelError> {
        self.check_dim(x0)?;
        let mut states = Vec::with_capacity(steps + 1);
        states.push(x0.clone());
        for i in 0..steps {
            let next = self.step_unchecked(&states[i]);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFiniteState { step: i + 1 });
            }
            states.push(next);
        }
        Ok(Trajectory { states, dt: self.dt })
    }

    /// Tangent linear propagator `M_{0,i}` along `traj`: the product of the
    /// per-step TLMs `step_tlm(states[i-1]) ... step_tlm(states[0])`.
    pub fn propagate_tlm(&self, traj: &Trajectory, i: usize) -> Result<DMatrix<f64>, ModelError> {
        if i > traj.steps() {
            return Err(ModelError::IndexOutOfRange { index: i, steps: traj.steps() });
        }
        let mut m = DMatrix::<f64>::identity(self.n, self.n);
        for j in 0..i {
            m = self.step_tlm_at(traj, j)? * m;
        }
        Ok(m)
    }

    /// All propagators `M_{0,i}` for the requested (sorted) step indices, in
    /// one sweep along the trajectory.
    pub fn propagate_tlm_many(
        &self,
        traj: &Trajectory,
        indices: &[usize],
    ) -> Result<Vec<DMatrix<f64>>, ModelError> {
        let mut out = Vec::with_capacity(indices.len());
        let mut m = DMatrix::<f64>::identity(self.n, self.n);
        let mut at = 0;
        for &i in indices {
            if i > traj.steps() {
                return Err(ModelError::IndexOutOfRange { index: i, steps: traj.steps() });
            }
            debug_assert!(i >= at, "indices must be sorted");
            while at < i {
                m = self.step_tlm_at(traj, at)? * m;
                at += 1;
            }
            out.push(m.clone());
        }
        Ok(out)
    }

    fn step_tlm_at(&self, traj: &Trajectory, j: usize) -> Result<DMatrix<f64>, ModelError> {
        self.step_tlm(&traj.states[j]).map_err(|e| match e {
            ModelError::NonFiniteState { .. } => ModelError::NonFiniteState { step: j + 1 },
            other => other,
        })
    }
}

/// States `x_0 .. x_N` of one model integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub dt: f64,
}

impl Trajectory {
    /// Number of steps `N` (the trajectory holds `N + 1` states).
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn initial(&self) -> &StateVector {
        &self.states[0]
    }

    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectory is never empty")
    }
}
