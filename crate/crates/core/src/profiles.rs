//! Accuracy and RMSE profiles over ensemble result tables.
//!
//! The reference ("truth") cost of a realization is the lowest best-within-
//! budget cost any method reached on it. A method solves a realization at
//! tolerance `tau_f` when `(J_best - J_t) / (J0 - J_t) <= tau_f`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::models::StateVector;
use crate::solvers::Method;
use crate::twin::EnsembleResultRow;

/// Accuracy used to decide "solved" for RMSE profiles.
pub const RMSE_TAU_F: f64 = 1e-3;
/// Default number of RMSE thresholds.
pub const RMSE_GRID_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("result table is empty")]
    Empty,
    #[error("profile grid is empty")]
    EmptyGrid,
    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),
}

/// `|x_a - x_ref| / sqrt(n)`.
pub fn analysis_rmse(x_a: &StateVector, x_ref: &StateVector) -> f64 {
    (x_a - x_ref).norm() / (x_a.len() as f64).sqrt()
}

/// Lowest finite best cost among `rows` and the method that owns it; ties go
/// to the earlier method in GN, LS, REG order. `None` when no method has a
/// finite cost.
pub fn select_truth(rows: &[EnsembleResultRow]) -> Option<(f64, Method)> {
    let mut sorted: Vec<&EnsembleResultRow> = rows.iter().filter(|r| r.cost_best.is_finite()).collect();
    sorted.sort_by_key(|r| r.method);
    sorted.into_iter().fold(None, |best, r| match best {
        Some((c, _)) if c <= r.cost_best => best,
        _ => Some((r.cost_best, r.method)),
    })
}

/// Solved criterion, inclusive at the boundary. A realization whose initial
/// cost already equals the truth is solved by every method.
pub fn solved_flag(j_best: f64, j0: f64, j_t: f64, tau_f: f64) -> bool {
    if j0 == j_t {
        return true;
    }
    if !j_best.is_finite() {
        return false;
    }
    (j_best - j_t) / (j0 - j_t) <= tau_f
}

/// Fraction of realizations solved per method over a tolerance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCurve {
    /// Abscissa: `-log10(tau_f)` for accuracy profiles, the RMSE threshold
    /// for RMSE profiles.
    pub x: Vec<f64>,
    pub methods: Vec<Method>,
    /// `fractions[m][k]` belongs to `methods[m]` at `x[k]`.
    pub fractions: Vec<Vec<f64>>,
    /// Number of realizations, the denominator of every fraction.
    pub n_r: usize,
    /// Realizations on which no method had a finite cost.
    pub excluded: usize,
    /// Realizations with `J0 == J_t`, counted solved by all.
    pub degenerate: usize,
}

impl ProfileCurve {
    pub fn curve(&self, method: Method) -> Option<&[f64]> {
        self.methods.iter().position(|&m| m == method).map(|i| self.fractions[i].as_slice())
    }

    /// Fraction of `method` at the grid point closest to `x`.
    pub fn fraction_at(&self, method: Method, x: f64) -> Option<f64> {
        let curve = self.curve(method)?;
        let k = self
            .x
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))?
            .0;
        Some(curve[k])
    }
}

/// `x = k / 100` for `k = 0..=500`, i.e. `tau_f = 1 .. 1e-5`.
pub fn default_accuracy_grid() -> Vec<f64> {
    (0..=500).map(|k| k as f64 / 100.0).collect()
}

/// `points` evenly spaced thresholds on `[0, max_rmse]`.
pub fn default_rmse_grid(max_rmse: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![max_rmse],
        _ => (0..points).map(|k| max_rmse * k as f64 / (points - 1) as f64).collect(),
    }
}

struct Group<'a> {
    j0: f64,
    truth: Option<f64>,
    rows: Vec<&'a EnsembleResultRow>,
}

struct Grouped<'a> {
    methods: Vec<Method>,
    groups: Vec<Group<'a>>,
    excluded: usize,
    degenerate: usize,
}

fn group(table: &[EnsembleResultRow]) -> Result<Grouped<'_>, ProfileError> {
    if table.is_empty() {
        return Err(ProfileError::Empty);
    }
    let mut by_index: BTreeMap<usize, Vec<&EnsembleResultRow>> = BTreeMap::new();
    for row in table {
        by_index.entry(row.seed_index).or_default().push(row);
    }
    let mut methods: Vec<Method> = table.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut excluded = 0;
    let mut degenerate = 0;
    let groups = by_index
        .into_values()
        .map(|rows| {
            let owned: Vec<EnsembleResultRow> = rows.iter().map(|r| (*r).clone()).collect();
            let truth = select_truth(&owned).map(|(c, _)| c);
            // the initial cost is shared; take the first finite one
            let j0 = rows.iter().map(|r| r.cost_initial).find(|c| c.is_finite()).unwrap_or(f64::NAN);
            match truth {
                None => excluded += 1,
                Some(t) if t == j0 => degenerate += 1,
                _ => {}
            }
            Group { j0, truth, rows }
        })
        .collect();
    Ok(Grouped { methods, groups, excluded, degenerate })
}

fn solved_rows<'a>(grouped: &'a Grouped<'_>, method: Method, tau_f: f64) -> impl Iterator<Item = &'a EnsembleResultRow> + 'a {
    grouped.groups.iter().filter_map(move |g| {
        let truth = g.truth?;
        let row = g.rows.iter().find(|r| r.method == method)?;
        solved_flag(row.cost_best, g.j0, truth, tau_f).then_some(*row)
    })
}

/// Accuracy profile on `grid` (values of `-log10(tau_f)`).
pub fn accuracy_profile(table: &[EnsembleResultRow], grid: &[f64]) -> Result<ProfileCurve, ProfileError> {
    if grid.is_empty() {
        return Err(ProfileError::EmptyGrid);
    }
    let grouped = group(table)?;
    let n_r = grouped.groups.len();
    let fractions = grouped
        .methods
        .iter()
        .map(|&m| {
            grid.iter()
                .map(|&x| solved_rows(&grouped, m, 10f64.powf(-x)).count() as f64 / n_r as f64)
                .collect()
        })
        .collect();
    Ok(ProfileCurve {
        x: grid.to_vec(),
        methods: grouped.methods.clone(),
        fractions,
        n_r,
        excluded: grouped.excluded,
        degenerate: grouped.degenerate,
    })
}

/// RMSE profile: a (realization, method) pair counts at threshold `x` when it
/// is solved at `tau_f` and its RMSE is at most `x`. Without a grid,
/// [`RMSE_GRID_POINTS`] thresholds span `[0, max finite RMSE]`.
pub fn rmse_profile(table: &[EnsembleResultRow], tau_f: f64, grid: Option<&[f64]>) -> Result<ProfileCurve, ProfileError> {
    if !(tau_f >= 0.0 && tau_f.is_finite()) {
        return Err(ProfileError::InvalidTolerance(tau_f));
    }
    let grouped = group(table)?;
    let grid = match grid {
        Some(g) if g.is_empty() => return Err(ProfileError::EmptyGrid),
        Some(g) => g.to_vec(),
        None => {
            let max = table.iter().map(|r| r.rmse).filter(|r| r.is_finite()).fold(0.0, f64::max);
            default_rmse_grid(max, RMSE_GRID_POINTS)
        }
    };
    let n_r = grouped.groups.len();
    let fractions = grouped
        .methods
        .iter()
        .map(|&m| {
            let rmses: Vec<f64> = solved_rows(&grouped, m, tau_f).map(|r| r.rmse).collect();
            grid.iter()
                .map(|&x| rmses.iter().filter(|&&e| e <= x).count() as f64 / n_r as f64)
                .collect()
        })
        .collect();
    Ok(ProfileCurve {
        x: grid,
        methods: grouped.methods.clone(),
        fractions,
        n_r,
        excluded: grouped.excluded,
        degenerate: grouped.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::StopReason;
    use nalgebra::DVector;

    pub(crate) fn row(index: usize, method: Method, j0: f64, best: f64, rmse: f64) -> EnsembleResultRow {
        EnsembleResultRow {
            seed_index: index,
            method,
            function_evals: 4,
            jacobian_evals: 4,
            cost_final: best,
            cost_best: best,
            grad_norm_final: 1.0,
            step_norm_final: 1.0,
            rmse,
            stop_reason: StopReason::Budget,
            cost_initial: j0,
        }
    }

    #[test]
    fn rmse_formula() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(analysis_rmse(&a, &a), 0.0);
        assert_eq!(analysis_rmse(&a, &a.add_scalar(-1.0)), 1.0);
        let b = DVector::from_vec(vec![0.5, -1.0, 2.0, 7.0]);
        let manual = ((0.5f64.powi(2) + 9.0 + 1.0 + 9.0) / 4.0).sqrt();
        assert!((analysis_rmse(&a, &b) - manual).abs() < 1e-15);
    }

    #[test]
    fn truth_is_min_with_method_order_ties() {
        let rows = vec![
            row(0, Method::GaussNewton, 100.0, 81.55, 0.0),
            row(0, Method::LineSearch, 100.0, 8.69, 0.0),
            row(0, Method::Regularised, 100.0, 8.69, 0.0),
        ];
        assert_eq!(select_truth(&rows), Some((8.69, Method::LineSearch)));
        assert_eq!(select_truth(&rows[..1]), Some((81.55, Method::GaussNewton)));
        let nan = vec![row(0, Method::GaussNewton, 1.0, f64::NAN, 0.0)];
        assert_eq!(select_truth(&nan), None);
    }

    #[test]
    fn solved_flag_cases() {
        assert!(solved_flag(10.0, 100.0, 10.0, 1.0));
        assert!(!solved_flag(100.0, 100.0, 10.0, 0.99));
        // (10.09 - 10) / 90 = 0.001 exactly in decimal; the float quotient
        // rounds below the boundary
        assert!(solved_flag(10.09, 100.0, 10.0, 1e-3));
        assert!(!solved_flag(10.1, 100.0, 10.0, 1e-3));
        assert!(solved_flag(f64::NAN, 5.0, 5.0, 0.0));
        assert!(!solved_flag(f64::NAN, 100.0, 10.0, 1.0));
    }

    #[test]
    fn inclusive_boundary_on_representable_ratio() {
        assert!(solved_flag(1.5, 3.0, 1.0, 0.25));
        assert!(!solved_flag(1.5, 3.0, 1.0, 0.2499999));
    }

    #[test]
    fn flat_profile_when_all_at_truth() {
        let rows: Vec<_> = Method::ALL.iter().map(|&m| row(0, m, 10.0, 1.0, 0.0)).collect();
        let p = accuracy_profile(&rows, &default_accuracy_grid()).unwrap();
        assert_eq!(p.x.len(), 501);
        assert!(p.fractions.iter().all(|c| c.iter().all(|&f| f == 1.0)));
    }

    #[test]
    fn accuracy_counts_and_exclusion() {
        let rows = vec![
            row(0, Method::GaussNewton, 100.0, 50.0, 0.0),
            row(0, Method::LineSearch, 100.0, 10.0, 0.0),
            row(1, Method::GaussNewton, 100.0, f64::NAN, 0.0),
            row(1, Method::LineSearch, 100.0, f64::NAN, 0.0),
            row(2, Method::GaussNewton, 7.0, 7.0, 0.0),
            row(2, Method::LineSearch, 7.0, 7.0, 0.0),
        ];
        let p = accuracy_profile(&rows, &[0.0, 0.1, 1.0]).unwrap();
        assert_eq!(p.n_r, 3);
        assert_eq!(p.excluded, 1);
        assert_eq!(p.degenerate, 1);
        assert_eq!(p.methods, vec![Method::GaussNewton, Method::LineSearch]);
        // GN ratio on realization 0 is 40/90 = 0.444: solved for tau_f >= 10^-0.1
        assert_eq!(p.curve(Method::GaussNewton).unwrap(), &[2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(p.curve(Method::LineSearch).unwrap(), &[2.0 / 3.0; 3]);
        assert_eq!(p.fraction_at(Method::GaussNewton, 0.9), Some(1.0 / 3.0));
        assert!(matches!(accuracy_profile(&[], &[0.0]), Err(ProfileError::Empty)));
        assert!(matches!(accuracy_profile(&rows, &[]), Err(ProfileError::EmptyGrid)));
    }

    #[test]
    fn rmse_counting_oracle() {
        let rows = vec![
            row(0, Method::Regularised, 10.0, 1.0, 0.1),
            row(1, Method::Regularised, 10.0, 1.0, 0.3),
        ];
        let p = rmse_profile(&rows, RMSE_TAU_F, Some(&[0.2, 0.4])).unwrap();
        assert_eq!(p.curve(Method::Regularised).unwrap(), &[0.5, 1.0]);
        let d = rmse_profile(&rows, RMSE_TAU_F, None).unwrap();
        assert_eq!(d.x.len(), RMSE_GRID_POINTS);
        assert_eq!(d.x[0], 0.0);
        assert_eq!(*d.x.last().unwrap(), 0.3);
    }

    #[test]
    fn unsolved_never_counts_in_rmse_profile() {
        let rows = vec![
            row(0, Method::GaussNewton, 10.0, 9.0, 0.0),
            row(0, Method::LineSearch, 10.0, 1.0, 5.0),
        ];
        let p = rmse_profile(&rows, RMSE_TAU_F, None).unwrap();
        assert!(p.curve(Method::GaussNewton).unwrap().iter().all(|&f| f == 0.0));
        assert_eq!(p.curve(Method::LineSearch).unwrap()[0], 0.0);
        assert_eq!(*p.curve(Method::LineSearch).unwrap().last().unwrap(), 1.0);
    }
}
