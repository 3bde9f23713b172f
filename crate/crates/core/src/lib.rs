//! Adaptive regularized proximal quasi-Newton methods for
//! `min f(X) + μ‖X‖₁` over the Stiefel manifold `St(n, r) = {X : XᵀX = I}`.
//!
//! ```
//! use arpqn::problems::make_cm;
//! use arpqn::solver::{solve, SolverConfig, Status};
//! use arpqn::stiefel::random_point;
//!
//! let problem = make_cm(32, 2, 0.1).unwrap();
//! let x0 = random_point(32, 2, 0).unwrap();
//! let out = solve(&problem, &x0, &SolverConfig::default()).unwrap();
//! assert_eq!(out.status, Status::Converged);
//! assert!(out.x.residual() < 1e-10);
//! ```
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod metric;
pub mod problems;
pub mod solver;
pub mod stiefel;
pub mod subproblem;

pub use error::{Error, Result};
