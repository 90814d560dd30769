//! Min-max optimization with Hamiltonian gradient descent.
//!
//! The crate is split along the lines of the workflow:
//!
//! - [`objectives`]: two-player objectives `g(x1, x2)` with analytic signed
//!   gradient `xi` and Jacobian `J`.
//! - [`calculus`]: the Hamiltonian `H = ½‖xi‖²`, its gradient `Jᵀxi`,
//!   Hessian-vector products and finite-difference oracles.
//! - [`solvers`]: SGDA, HGD, consensus optimization, stochastic HGD and the
//!   sign-adjusted HGD variants, plus a common driver.
//! - [`spectral`]: PL certificates, eigenvalue lower bounds for block
//!   Jacobians, rate predictions and the contraction-map uniqueness check.
//! - [`harness`]: configuration files, presets, trajectory CSVs and sweeps.

pub mod calculus;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod solvers;
pub mod spectral;

pub use error::{Error, Result};
pub use objectives::{build_objective, Objective, Point, Problem, ProblemFamily};
