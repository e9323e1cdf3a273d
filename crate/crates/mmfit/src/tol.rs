//! Solver tolerances and iteration caps, centralized so the command line can
//! expose them and tests can reference the same numbers being enforced.

/// Convergence of the inner log-linear solver: infinity norm of the
/// mean-parameter residual `tau_target - X' pi`. Two orders tighter than the
/// guaranteed 1e-10 fit invariant: the outer adjustment-factor iteration
/// reads the log normalizer off the inner solution, and a looser inner
/// residual leaves too much noise there for the outer tolerance to be
/// reachable.
pub const INNER_TOL: f64 = 1e-12;

/// Iteration cap for the inner Newton solver.
pub const MAX_INNER_ITER: usize = 200;

/// Convergence of the outer adjustment-factor iteration: `|f(gamma)|`,
/// the log normalizing constant of the inner fit.
pub const OUTER_TOL: f64 = 1e-10;

/// Iteration cap for the outer adjustment-factor iteration.
pub const MAX_OUTER_ITER: usize = 100;

/// Maximum step halvings before a step is declared unrecoverable.
pub const MAX_HALVINGS: usize = 30;

/// Relative pivot threshold for rank detection in QR and null-space bases.
pub const NULLSPACE_TOL: f64 = 1e-10;

/// Feasibility slack of the phase-one simplex.
pub const LP_TOL: f64 = 1e-9;

/// Absolute precision of the bisection locating the feasible range of the
/// adjustment factor.
pub const FEASIBLE_RANGE_TOL: f64 = 1e-4;

/// Scale-aware threshold for "the unit vector lies in the column span":
/// the least-squares residual norm must exceed this times sqrt(r).
pub const ONES_SPAN_TOL: f64 = 1e-8;

/// Residual of the surface equation `log(1' exp(X theta)) = 0` when scaling
/// a cone direction onto the constraint surface.
pub const SURFACE_TOL: f64 = 1e-12;

/// Normalized comparison tolerance when deduplicating extreme rays.
pub const RAY_DEDUP_TOL: f64 = 1e-9;

/// Guard on the number of design columns for cone-edge enumeration.
pub const MAX_CONE_DIM: usize = 8;
