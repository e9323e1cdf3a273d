//! Fitting the curved model: `log pi = X theta` together with `1'pi = 1`.
//!
//! The likelihood equation takes the form `gamma X'p = X'pi` for an
//! adjustment factor `gamma = 1/(1+alpha)`, `alpha` being the Lagrange
//! multiplier of the normalization constraint. Two fitters are provided:
//!
//! * an outer Newton iteration on `gamma`, driving the log normalizing
//!   constant `f(gamma)` of the inner log-linear fit to zero using the
//!   closed-form slope `gamma t' F(gamma)^{-1} t` (`f` is strictly
//!   increasing, so the root is unique);
//! * a primal bisection that works on the unnormalized (intensity) scale,
//!   solving `X' mu = gamma X'p` with `log mu` exactly in the column span,
//!   and bisecting on `1'mu - 1`.
//!
//! Both solve the same equations and agree to solver precision; the second
//! exists as an independent route for cross-checking the first.

use crate::loglinear::{
    fisher_info, fit_loglinear, FisherInfo, FitOptions, LogLinearError, LogLinearFit,
};
use crate::model::DesignMatrix;
use crate::numerics::{self, dot, norm_inf, Cholesky, Matrix, NumericsError};
use crate::tol;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurvedError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("adjustment factor {gamma} puts the target outside the feasible set")]
    Infeasible { gamma: f64 },
    #[error(
        "outer iteration did not converge within {steps} steps \
         (gamma {gamma}, residual {f_value:.3e})"
    )]
    OuterNonConvergence { gamma: f64, f_value: f64, steps: usize },
    #[error("boundary approach: {0}")]
    Boundary(String),
    #[error("could not bracket the normalization root within gamma in [{lo}, {hi}]")]
    BracketingFailed { lo: f64, hi: f64 },
    #[error("feasible range degenerates to the single point gamma = {gamma}")]
    DegenerateRange { gamma: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Inner(#[from] LogLinearError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl crate::ClassifiedError for CurvedError {
    fn class(&self) -> crate::ErrorClass {
        use crate::ErrorClass;
        match self {
            Self::DegenerateData(_) | Self::Domain(_) => ErrorClass::Validation,
            Self::Infeasible { .. } | Self::DegenerateRange { .. } => ErrorClass::Feasibility,
            Self::OuterNonConvergence { .. } | Self::Boundary(_) | Self::BracketingFailed { .. } => {
                ErrorClass::Convergence
            }
            Self::Inner(e) => e.class(),
            Self::Numerics(e) => e.class(),
        }
    }
}

/// A converged curved-model fit.
#[derive(Debug, Clone)]
pub struct CurvedFit {
    pub theta: Vec<f64>,
    pub pi: Vec<f64>,
    /// Adjustment factor; `gamma X'p = X'pi` at the solution.
    pub gamma: f64,
    /// Lagrange multiplier of the normalization constraint, `1/gamma - 1`.
    pub alpha: f64,
    /// `y' log pi` (scaled by `n` when fitting proportions).
    pub loglik: f64,
    pub inner_fits: usize,
    pub outer_steps: usize,
}

/// The feasible range of the adjustment factor for a fixed statistic `s`:
/// the set of `gamma` with `s/gamma` reproducible by a probability vector.
#[derive(Debug, Clone)]
pub struct FeasibleRange {
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    pub stat: Vec<f64>,
}

/// Evaluates `f(gamma)`: fits the log-linear model with mean target
/// `gamma * t` and returns its log normalizing constant along with the fit.
///
/// `f` equals `c' log pi(gamma)` for the canonical constraint row `c`, and
/// is strictly increasing in `gamma`; the curved MLE is its root.
pub fn log_normalizer_at(
    gamma: f64,
    design: &DesignMatrix,
    t: &[f64],
    warm_start: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<(f64, LogLinearFit), CurvedError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(CurvedError::Domain(format!(
            "adjustment factor must be positive and finite, got {gamma}"
        )));
    }
    let target: Vec<f64> = t.iter().map(|v| gamma * v).collect();
    if !numerics::simplex_feasible(design.matrix(), &target, tol::LP_TOL) {
        return Err(CurvedError::Infeasible { gamma });
    }
    let fit = fit_loglinear(design, &target, warm_start, opts)?;
    Ok((fit.log_normalizer, fit))
}

/// Slope of `f` at `gamma`: `gamma * t' F(gamma)^{-1} t`, strictly positive
/// because the information matrix is positive definite on the open simplex.
pub fn log_normalizer_slope(
    gamma: f64,
    info: &FisherInfo,
    t: &[f64],
) -> Result<f64, CurvedError> {
    if !(gamma > 0.0) {
        return Err(CurvedError::Domain(format!(
            "adjustment factor must be positive, got {gamma}"
        )));
    }
    Ok(gamma * dot(t, &info.solve(t)))
}

fn validate_counts(y: &[u64], r: usize) -> Result<(u64, Vec<f64>), CurvedError> {
    if y.len() != r {
        return Err(CurvedError::Domain(format!(
            "counts have {} cells, design has {r} rows",
            y.len()
        )));
    }
    let n: u64 = y.iter().sum();
    if n == 0 {
        return Err(CurvedError::DegenerateData("total count is zero".into()));
    }
    let p: Vec<f64> = y.iter().map(|&v| v as f64 / n as f64).collect();
    Ok((n, p))
}

fn validate_props(p: &[f64], r: usize) -> Result<(), CurvedError> {
    if p.len() != r {
        return Err(CurvedError::Domain(format!(
            "proportions have {} cells, design has {r} rows",
            p.len()
        )));
    }
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(CurvedError::Domain(
            "proportions must be nonnegative and finite".into(),
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CurvedError::Domain(format!(
            "proportions must sum to 1 (off by {:.3e})",
            total - 1.0
        )));
    }
    if p.iter().filter(|&&v| v > 0.0).count() < 2 {
        return Err(CurvedError::DegenerateData(
            "fewer than two cells observed; the MLE does not exist in the open simplex".into(),
        ));
    }
    Ok(())
}

/// Fits the curved model to observed counts by the outer Newton iteration.
pub fn fit_curved_newton(
    design: &DesignMatrix,
    y: &[u64],
    opts: &FitOptions,
) -> Result<CurvedFit, CurvedError> {
    let (n, p) = validate_counts(y, design.rows())?;
    fit_curved_newton_props(design, &p, n as f64, opts)
}

/// Proportion-level entry point of the Newton fitter; `n` only scales the
/// reported log-likelihood.
pub fn fit_curved_newton_props(
    design: &DesignMatrix,
    p: &[f64],
    n: f64,
    opts: &FitOptions,
) -> Result<CurvedFit, CurvedError> {
    validate_props(p, design.rows())?;
    let t = design.matrix().tr_matvec(p);

    let mut gamma = opts.gamma_start;
    let mut inner_fits = 1usize;
    let (mut f, mut inner) = log_normalizer_at(gamma, design, &t, None, opts)?;
    let mut outer_steps = 0usize;

    while f.abs() > opts.outer_tol {
        if outer_steps >= opts.max_outer {
            return Err(CurvedError::OuterNonConvergence {
                gamma,
                f_value: f,
                steps: outer_steps,
            });
        }
        let info = fisher_info(&inner.pi, design)?;
        let slope = log_normalizer_slope(gamma, &info, &t)?;
        let mut step = -f / slope;
        if outer_steps == 0 {
            // The first step is damped unconditionally: the starting point is
            // feasible but the step prediction is least reliable there.
            step *= 0.5;
        }
        let mut halvings = 0usize;
        loop {
            let candidate = gamma + step;
            if candidate > 0.0 {
                inner_fits += 1;
                match log_normalizer_at(candidate, design, &t, Some(&inner.theta), opts) {
                    Ok((f_new, fit_new)) => {
                        gamma = candidate;
                        f = f_new;
                        inner = fit_new;
                        break;
                    }
                    Err(
                        CurvedError::Infeasible { .. }
                        | CurvedError::Inner(LogLinearError::NonConvergence { .. })
                        | CurvedError::Inner(LogLinearError::Boundary { .. })
                        | CurvedError::Inner(LogLinearError::SingularInformation(_)),
                    ) => {}
                    Err(other) => return Err(other),
                }
            }
            step *= 0.5;
            halvings += 1;
            if halvings > opts.max_halvings {
                return Err(CurvedError::Boundary(format!(
                    "step shortening exhausted at gamma = {gamma}; \
                     the statistic sits too close to the feasible boundary"
                )));
            }
        }
        outer_steps += 1;
    }

    Ok(assemble_fit(inner, gamma, p, n, inner_fits, outer_steps))
}

fn assemble_fit(
    inner: LogLinearFit,
    gamma: f64,
    p: &[f64],
    n: f64,
    inner_fits: usize,
    outer_steps: usize,
) -> CurvedFit {
    let loglik = n * p
        .iter()
        .zip(&inner.pi)
        .filter(|(&pj, _)| pj > 0.0)
        .map(|(&pj, &fj)| pj * fj.ln())
        .sum::<f64>();
    CurvedFit {
        theta: inner.theta,
        pi: inner.pi,
        gamma,
        alpha: 1.0 / gamma - 1.0,
        loglik,
        inner_fits,
        outer_steps,
    }
}

/// Newton solve on the unnormalized (intensity) scale: find `theta` with
/// `X' exp(X theta) = target`. Unlike the normalized inner fit this imposes
/// the full constraint set exactly, at the price of `1'mu` floating free.
pub(crate) fn poisson_solve(
    x: &Matrix,
    target: &[f64],
    theta0: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<(Vec<f64>, Vec<f64>, usize), LogLinearError> {
    let k = x.cols();
    let mut theta = theta0.map_or_else(|| vec![0.0; k], <[f64]>::to_vec);
    let mu_of = |th: &[f64]| -> Vec<f64> { x.matvec(th).iter().map(|v| v.exp()).collect() };
    let mut mu = mu_of(&theta);
    let residual = |m: &[f64]| -> Vec<f64> {
        target
            .iter()
            .zip(x.tr_matvec(m))
            .map(|(t, v)| t - v)
            .collect()
    };
    let mut resid = residual(&mu);
    let mut rnorm = norm_inf(&resid);
    let scale = norm_inf(target).max(1.0);

    // W = X' diag(mu) X.
    let weight_matrix = |mu: &[f64]| -> Matrix {
        let mut w = Matrix::zeros(k, k);
        for (j, &m) in mu.iter().enumerate() {
            let row = x.row(j);
            for a in 0..k {
                let f = m * row[a];
                if f == 0.0 {
                    continue;
                }
                for b in 0..k {
                    let v = w.get(a, b) + f * row[b];
                    w.set(a, b, v);
                }
            }
        }
        w
    };

    let mut iterations = 0usize;
    while rnorm > opts.inner_tol * scale {
        if iterations >= opts.max_inner {
            return Err(LogLinearError::NonConvergence {
                residual: rnorm,
                iterations,
            });
        }
        let chol =
            Cholesky::factor(&weight_matrix(&mu)).map_err(LogLinearError::SingularInformation)?;
        let delta = chol.solve(&resid);

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&delta)
                .map(|(t, d)| t + step * d)
                .collect();
            let mu_cand = mu_of(&cand);
            let resid_cand = residual(&mu_cand);
            let rn_cand = norm_inf(&resid_cand);
            if rn_cand < rnorm {
                theta = cand;
                mu = mu_cand;
                resid = resid_cand;
                rnorm = rn_cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(LogLinearError::NonConvergence {
                residual: rnorm,
                iterations,
            });
        }
        iterations += 1;
    }
    // Polish as in the normalized solver.
    if let Ok(chol) = Cholesky::factor(&weight_matrix(&mu)) {
        let delta = chol.solve(&resid);
        let cand: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
        let mu_cand = mu_of(&cand);
        if norm_inf(&residual(&mu_cand)) < rnorm {
            theta = cand;
            mu = mu_cand;
        }
    }
    Ok((theta, mu, iterations))
}

/// Fits the curved model by primal bisection on the unnormalized scale.
///
/// For fixed `gamma` the intensity fit `mu(gamma)` satisfies all log-linear
/// constraints exactly while its total mass floats; `1'mu(gamma) - 1` is
/// strictly increasing in `gamma`, so bisection from a sign-flip bracket
/// found by doubling outward from `gamma = 1` converges to the MLE.
pub fn fit_curved_bisection(
    design: &DesignMatrix,
    y: &[u64],
    opts: &FitOptions,
) -> Result<CurvedFit, CurvedError> {
    let (n, p) = validate_counts(y, design.rows())?;
    fit_curved_bisection_props(design, &p, n as f64, opts)
}

pub fn fit_curved_bisection_props(
    design: &DesignMatrix,
    p: &[f64],
    n: f64,
    opts: &FitOptions,
) -> Result<CurvedFit, CurvedError> {
    validate_props(p, design.rows())?;
    let x = design.matrix();
    let t = x.tr_matvec(p);
    const BRACKET_LO: f64 = 1e-3;
    const BRACKET_HI: f64 = 1e3;

    let mut inner_fits = 0usize;
    let mut warm: Option<Vec<f64>> = None;
    let mut mass_gap = |gamma: f64, warm: &mut Option<Vec<f64>>| -> Result<f64, CurvedError> {
        let target: Vec<f64> = t.iter().map(|v| gamma * v).collect();
        inner_fits += 1;
        let (theta, mu, _) = poisson_solve(x, &target, warm.as_deref(), opts)?;
        *warm = Some(theta);
        Ok(mu.iter().sum::<f64>() - 1.0)
    };

    let gap_at_one = mass_gap(1.0, &mut warm)?;
    let (mut lo, mut hi) = (1.0, 1.0);
    if gap_at_one > 0.0 {
        // Mass too large: the root lies below one.
        loop {
            lo *= 0.5;
            if lo < BRACKET_LO {
                return Err(CurvedError::BracketingFailed {
                    lo: BRACKET_LO,
                    hi: 1.0,
                });
            }
            if mass_gap(lo, &mut warm)? < 0.0 {
                break;
            }
            hi = lo;
        }
    } else if gap_at_one < 0.0 {
        loop {
            hi *= 2.0;
            if hi > BRACKET_HI {
                return Err(CurvedError::BracketingFailed {
                    lo: 1.0,
                    hi: BRACKET_HI,
                });
            }
            if mass_gap(hi, &mut warm)? > 0.0 {
                break;
            }
            lo = hi;
        }
    }

    let mut outer_steps = 0usize;
    while hi - lo > 1e-13 * hi.max(1.0) && outer_steps < 200 {
        let mid = 0.5 * (lo + hi);
        if mass_gap(mid, &mut warm)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        outer_steps += 1;
    }
    let gamma = 0.5 * (lo + hi);
    let final_target: Vec<f64> = t.iter().map(|v| gamma * v).collect();
    inner_fits += 1;
    let (theta, mu, _) = poisson_solve(x, &final_target, warm.as_deref(), opts)?;
    let total: f64 = mu.iter().sum();
    let pi: Vec<f64> = mu.iter().map(|v| v / total).collect();

    let inner = LogLinearFit {
        theta,
        tau: x.tr_matvec(&pi),
        final_residual: 0.0,
        iterations: 0,
        log_normalizer: total.ln(),
        pi,
    };
    Ok(assemble_fit(inner, gamma, p, n, inner_fits, outer_steps))
}

/// Locates the feasible range of the adjustment factor for a statistic `s`
/// by bisecting the feasibility predicate outward from `gamma = 1`.
pub fn feasible_range(design: &DesignMatrix, s: &[f64]) -> Result<FeasibleRange, CurvedError> {
    let x = design.matrix();
    if s.len() != design.cols() {
        return Err(CurvedError::Domain(format!(
            "statistic has length {}, design has {} columns",
            s.len(),
            design.cols()
        )));
    }
    let feasible = |gamma: f64| -> bool {
        let t: Vec<f64> = s.iter().map(|v| v / gamma).collect();
        numerics::simplex_feasible(x, &t, tol::LP_TOL)
    };
    if !feasible(1.0) {
        return Err(CurvedError::Domain(
            "the statistic itself is not reproducible by any probability vector \
             (gamma = 1 infeasible)"
            .into(),
        ));
    }

    // Upper endpoint: double until infeasible, then bisect.
    let mut lo = 1.0;
    let mut hi = 2.0;
    while feasible(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(CurvedError::Domain(
                "feasible range has no finite upper endpoint; statistic is invalid".into(),
            ));
        }
    }
    while hi - lo > tol::FEASIBLE_RANGE_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma_upper = 0.5 * (lo + hi);

    // Lower endpoint: halve until infeasible, then bisect.
    let mut lo2 = 0.5;
    let mut hi2 = 1.0;
    while feasible(lo2) {
        hi2 = lo2;
        lo2 *= 0.5;
        if lo2 < 1e-9 {
            return Err(CurvedError::Domain(
                "feasible range has no positive lower endpoint; statistic is invalid".into(),
            ));
        }
    }
    while hi2 - lo2 > tol::FEASIBLE_RANGE_TOL {
        let mid = 0.5 * (lo2 + hi2);
        if feasible(mid) {
            hi2 = mid;
        } else {
            lo2 = mid;
        }
    }
    let gamma_lower = 0.5 * (lo2 + hi2);

    if gamma_upper - gamma_lower <= 2.0 * tol::FEASIBLE_RANGE_TOL {
        return Err(CurvedError::DegenerateRange { gamma: 1.0 });
    }
    Ok(FeasibleRange {
        gamma_lower,
        gamma_upper,
        stat: s.to_vec(),
    })
}

/// Log-likelihood of hypothetical data with statistic `t = s/gamma` for each
/// grid point: `n s' theta_hat / gamma`, where `theta_hat` is the (single)
/// curved MLE shared by the whole ray.
///
/// Strictly increasing in `gamma` because `s' theta_hat < 0`, so the supremum
/// sits at the upper feasible endpoint.
pub fn loglik_along_ray(
    design: &DesignMatrix,
    s: &[f64],
    n: u64,
    grid: &[f64],
) -> Result<Vec<f64>, CurvedError> {
    let x = design.matrix();
    let opts = FitOptions::default();
    let (theta_hat, mu_hat, _) = poisson_solve(x, s, None, &opts)?;
    let mass: f64 = mu_hat.iter().sum();
    if mass.ln().abs() > 1e-6 {
        return Err(CurvedError::Domain(format!(
            "statistic is not the fitted mean of any curved MLE (total mass {mass})"
        )));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &gamma in grid {
        if !(gamma > 0.0) {
            return Err(CurvedError::Domain(format!(
                "grid point {gamma} is not positive"
            )));
        }
        let t: Vec<f64> = s.iter().map(|v| v / gamma).collect();
        if !numerics::simplex_feasible(x, &t, tol::LP_TOL) {
            return Err(CurvedError::Infeasible { gamma });
        }
        out.push(n as f64 * dot(s, &theta_hat) / gamma);
    }
    Ok(out)
}
