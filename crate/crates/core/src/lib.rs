//! Lasso degrees of freedom and SURE.
//!
//! The crate solves the Lasso
//!
//! ```text
//! minimize  ½‖y − A x‖² + λ‖x‖₁
//! ```
//!
//! with proximal gradient iterations certified by the KKT conditions, reduces
//! any solution to one whose active columns are linearly independent, and uses
//! the size of that reduced support as an unbiased estimate of the degrees of
//! freedom of the Lasso response `A x̂`. On top of that it computes Stein's
//! unbiased risk estimate and runs seeded Monte Carlo experiments that check
//! its unbiasedness and reliability.
//!
//! Modules, bottom-up:
//!
//! * [`numerics`]: SVD-backed pseudo-inverse, projectors, rank and kernels.
//! * [`designs`]: design matrices, sparse signals and noise, all seeded.
//! * [`solver`]: soft-thresholding iterations and the KKT certificate.
//! * [`support`]: the full-column-rank reduction and a brute-force oracle.
//! * [`dof`]: dof estimate, SURE, hyperplane membership test, divergence checks.
//! * [`experiments`]: replicated risk estimates, reliability and λ selection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod designs;
pub mod dof;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod solver;
pub mod support;

pub use designs::{DesignSpec, NoiseSpec, SignalSpec};
pub use dof::{HyperplaneQuery, Membership, RiskReport};
pub use error::{Error, Result};
pub use experiments::{ExperimentConfig, ExperimentRecord, LambdaGrid};
pub use numerics::{Matrix, RankInfo, Vector};
pub use solver::{KktReport, LassoSolution, Problem, SolverOptions};
pub use support::ReducedSolution;

/// Version tag written into every serialized document.
pub const SCHEMA_VERSION: u32 = 1;
