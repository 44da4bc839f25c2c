//! Preconditioned strong-constraint 4D-Var with three outer-loop solvers
//! (Gauss-Newton, Gauss-Newton with backtracking-Armijo line search and
//! Gauss-Newton with quadratic regularisation) and a Lorenz-63/Lorenz-96
//! twin-experiment harness with accuracy and RMSE profiles.

pub mod assim;
pub mod cli;
pub mod models;
pub mod profiles;
pub mod solvers;
pub mod twin;
