//! Maximum likelihood estimation and testing for multiplicative multinomial
//! models: probability vectors constrained to `log pi = X theta` with no
//! normalizing intercept, which together with `sum(pi) = 1` form a curved
//! exponential family.
//!
//! The crate provides
//! - validation of 0/1 design matrices and the canonical constraint system,
//! - the inner log-linear solver in the mixed parametrization,
//! - two fitters for the curved model (an outer Newton iteration on the
//!   adjustment factor, and a primal bisection on the unnormalized scale),
//! - deviance, score and Wald-type test statistics with asymptotic p-values,
//! - polyhedral cone geometry for the constraint surface, and
//! - a Monte Carlo harness for rejection-rate studies.
//!
//! The `mmfit` binary exposes all of it as `fit`, `test`, `profile`,
//! `geometry` and `simulate` subcommands.

// Index loops mirror the matrix formulas; negated comparisons deliberately
// send NaN down the rejecting branch.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curved;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod loglinear;
pub mod model;
pub mod numerics;
pub mod simulation;
pub mod tol;

pub use curved::{fit_curved_bisection, fit_curved_newton, CurvedFit, FeasibleRange};
pub use inference::{dm_profile, test_report, ProfileCurve, TestReport};
pub use loglinear::{fit_loglinear, LogLinearFit};
pub use model::{constraint_canonical, validate_design, ConstraintSystem, DesignMatrix};
pub use numerics::{Matrix, RngStream};

/// Coarse classification of library errors; front ends map these to exit
/// codes and C API status values so the classes stay in sync.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Validation,
    Feasibility,
    Convergence,
    SizeGuard,
    ExcessFailures,
    Io,
    Internal,
}

/// Errors that know their [`ErrorClass`].
pub trait ClassifiedError: std::error::Error {
    fn class(&self) -> ErrorClass;
}
