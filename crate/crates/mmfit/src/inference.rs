//! Test statistics for the curved model and their asymptotic calibration.
//!
//! Testing proceeds in the sequence the model hierarchy suggests: first the
//! log-linear model is judged against the data (deviance `D_L`), and only
//! given that does it make sense to judge the curved model against the
//! log-linear one. Three asymptotically equivalent statistics are available
//! for the second step: the deviance `D_M`, the score-type `L = alpha^2 /
//! var(alpha)` and the Wald-type `G = (gamma-1)^2 / var(gamma)`, each
//! compared to a chi-square with one degree of freedom.

use crate::curved::{self, fit_curved_newton, poisson_solve, CurvedError, FeasibleRange};
use crate::loglinear::{
    deviance_loglinear, fisher_info, fit_loglinear, FisherInfo, FitOptions, LogLinearError,
};
use crate::model::DesignMatrix;
use crate::numerics::{chisq_sf, dot, NumericsError};
use crate::simulation::quantile_chisq1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Curved(#[from] CurvedError),
    #[error(transparent)]
    Inner(#[from] LogLinearError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl crate::ClassifiedError for InferenceError {
    fn class(&self) -> crate::ErrorClass {
        match self {
            Self::Dimension(_) | Self::Domain(_) => crate::ErrorClass::Validation,
            Self::Curved(e) => e.class(),
            Self::Inner(e) => e.class(),
            Self::Numerics(e) => e.class(),
        }
    }
}

/// Deviance of the curved fit against the log-linear fit,
/// `2 y' [log(pi_tilde) - log(pi_hat)]`, clipped to zero when round-off
/// leaves it within 1e-10 below zero.
pub fn deviance_curved(
    y: &[u64],
    pi_tilde: &[f64],
    pi_hat: &[f64],
) -> Result<f64, InferenceError> {
    if y.len() != pi_tilde.len() || y.len() != pi_hat.len() {
        return Err(InferenceError::Dimension(format!(
            "counts ({}), log-linear fit ({}) and curved fit ({}) must share one length",
            y.len(),
            pi_tilde.len(),
            pi_hat.len()
        )));
    }
    let raw = raw_curved_deviance(y, pi_tilde, pi_hat);
    if (-1e-10..0.0).contains(&raw) {
        Ok(0.0)
    } else {
        Ok(raw)
    }
}

fn raw_curved_deviance(y: &[u64], pi_tilde: &[f64], pi_hat: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(pi_tilde.iter().zip(pi_hat))
        .filter(|(&yj, _)| yj > 0)
        .map(|(&yj, (&tj, &hj))| yj as f64 * (tj.ln() - hj.ln()))
        .sum::<f64>()
}

/// Asymptotic variances of the Lagrange multiplier and the adjustment
/// factor: `var(alpha) = [n pi_hat' X F(gamma_hat)^{-1} X' pi_hat]^{-1}` and
/// `var(gamma) = var(alpha) / gamma_hat^4` by the delta method.
pub fn asymptotic_variances(
    pi_hat: &[f64],
    design: &DesignMatrix,
    n: u64,
    gamma_hat: f64,
) -> Result<(f64, f64), InferenceError> {
    if n == 0 {
        return Err(InferenceError::Domain("sample size is zero".into()));
    }
    if !(gamma_hat > 0.0) {
        return Err(InferenceError::Domain(format!(
            "adjustment factor must be positive, got {gamma_hat}"
        )));
    }
    let info = fisher_info(pi_hat, design)?;
    let s = design.matrix().tr_matvec(pi_hat);
    let quad = dot(&s, &info.solve(&s));
    let var_alpha = 1.0 / (n as f64 * quad);
    let var_gamma = var_alpha / gamma_hat.powi(4);
    Ok((var_alpha, var_gamma))
}

/// The score-type and Wald-type statistics.
pub fn score_and_gamma_statistics(
    gamma_hat: f64,
    alpha_hat: f64,
    var_alpha: f64,
    var_gamma: f64,
) -> (f64, f64) {
    debug_assert!(var_alpha > 0.0 && var_gamma > 0.0);
    let l = alpha_hat * alpha_hat / var_alpha;
    let g = (gamma_hat - 1.0) * (gamma_hat - 1.0) / var_gamma;
    (l, g)
}

/// Two-sided acceptance interval for the adjustment factor around 1:
/// `1 +- z sigma_gamma`, `z` the two-sided normal quantile of the level.
///
/// Along the ray of statistics `t = s/gamma` this marks the segment of data
/// compatible with the model.
pub fn gamma_acceptance_interval(
    var_gamma: f64,
    level: f64,
) -> Result<(f64, f64), InferenceError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::Domain(format!(
            "confidence level must be inside (0,1), got {level}"
        )));
    }
    if !(var_gamma >= 0.0) {
        return Err(InferenceError::Domain(format!(
            "variance must be nonnegative, got {var_gamma}"
        )));
    }
    // The two-sided normal quantile is the square root of the chi-square(1)
    // quantile at the complementary tail mass; algebraically identical.
    let z = quantile_chisq1(1.0 - level)?.sqrt();
    let half = z * var_gamma.sqrt();
    Ok((1.0 - half, 1.0 + half))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatEntry {
    pub value: f64,
    pub df: u32,
    pub p_value: f64,
}

/// Full test report for one dataset and design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    /// Data against the log-linear model.
    pub d_l: StatEntry,
    /// Log-linear against the curved model.
    pub d_m: StatEntry,
    /// Score-type statistic.
    pub l: StatEntry,
    /// Wald-type statistic.
    pub g: StatEntry,
    pub gamma: f64,
    pub alpha: f64,
    pub var_alpha: f64,
    pub var_gamma: f64,
    pub level: f64,
    pub gamma_interval: (f64, f64),
    /// True when round-off pushed the raw curved deviance below zero.
    pub dm_clipped: bool,
    /// Present when the log-linear model itself is rejected at the level;
    /// the curved-model statistics then condition on a doubtful baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl TestReport {
    /// The interval covers the fitted factor exactly when `G` clears the
    /// chi-square threshold at the same level.
    pub fn interval_consistent(&self) -> bool {
        let q = quantile_chisq1(1.0 - self.level).unwrap_or(f64::NAN);
        let inside =
            self.gamma >= self.gamma_interval.0 && self.gamma <= self.gamma_interval.1;
        inside == (self.g.value < q)
    }
}

/// Fits both models and assembles the full report.
pub fn test_report(
    design: &DesignMatrix,
    y: &[u64],
    level: f64,
    opts: &FitOptions,
) -> Result<TestReport, InferenceError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::Domain(format!(
            "confidence level must be inside (0,1), got {level}"
        )));
    }
    let n: u64 = y.iter().sum();
    if n == 0 {
        return Err(InferenceError::Domain("total count is zero".into()));
    }
    let p: Vec<f64> = y.iter().map(|&v| v as f64 / n as f64).collect();
    let t = design.matrix().tr_matvec(&p);

    let lin = fit_loglinear(design, &t, None, opts)?;
    let d_l = deviance_loglinear(y, &lin.pi)?;
    let df_l = (design.rows() - design.cols()) as u32;
    let p_l = chisq_sf(d_l, df_l)?;

    let fit = fit_curved_newton(design, y, opts)?;
    let raw_dm = raw_curved_deviance(y, &lin.pi, &fit.pi);
    let dm_clipped = raw_dm < 0.0;
    let d_m = deviance_curved(y, &lin.pi, &fit.pi)?;

    let (var_alpha, var_gamma) = asymptotic_variances(&fit.pi, design, n, fit.gamma)?;
    let (l_stat, g_stat) =
        score_and_gamma_statistics(fit.gamma, fit.alpha, var_alpha, var_gamma);
    let gamma_interval = gamma_acceptance_interval(var_gamma, level)?;

    let warning = if p_l < 1.0 - level {
        Some(format!(
            "the log-linear model is itself rejected at level {level} \
             (p = {p_l:.4}); interpret the curved-model statistics with care"
        ))
    } else {
        None
    };

    Ok(TestReport {
        d_l: StatEntry {
            value: d_l,
            df: df_l,
            p_value: p_l,
        },
        d_m: StatEntry {
            value: d_m,
            df: 1,
            p_value: chisq_sf(d_m, 1)?,
        },
        l: StatEntry {
            value: l_stat,
            df: 1,
            p_value: chisq_sf(l_stat, 1)?,
        },
        g: StatEntry {
            value: g_stat,
            df: 1,
            p_value: chisq_sf(g_stat, 1)?,
        },
        gamma: fit.gamma,
        alpha: fit.alpha,
        var_alpha,
        var_gamma,
        level,
        gamma_interval,
        dm_clipped,
        warning,
    })
}

/// Grid request for a deviance profile.
#[derive(Debug, Clone)]
pub enum GridChoice {
    /// Equally spaced points spanning the central 90% of the feasible range.
    Count(usize),
    /// Explicit grid points, all inside the feasible range.
    Points(Vec<f64>),
}

impl Default for GridChoice {
    fn default() -> Self {
        GridChoice::Count(101)
    }
}

/// The deviance and scaling-factor profiles along the statistic ray.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileCurve {
    pub gamma: Vec<f64>,
    pub d_m: Vec<f64>,
    pub g: Vec<f64>,
    /// Likelihood-ratio confidence interval `{gamma : D_M(gamma) <= q}`.
    pub lr_interval: (f64, f64),
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    pub level: f64,
    /// Grid points whose inner fit failed, with the failure reason.
    pub failures: Vec<(f64, String)>,
}

/// Profiles `D_M(gamma) = 2n [s'(theta(gamma) - theta_hat)/gamma - g(gamma)]`
/// and the scaling factor `g(gamma)` over a grid in the feasible range.
pub fn dm_profile(
    design: &DesignMatrix,
    s: &[f64],
    n: u64,
    grid: GridChoice,
    level: f64,
    opts: &FitOptions,
) -> Result<ProfileCurve, InferenceError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::Domain(format!(
            "confidence level must be inside (0,1), got {level}"
        )));
    }
    let range: FeasibleRange = curved::feasible_range(design, s)?;
    let points: Vec<f64> = match grid {
        GridChoice::Count(count) => {
            if count < 2 {
                return Err(InferenceError::Domain(
                    "a profile needs at least two grid points".into(),
                ));
            }
            let span = range.gamma_upper - range.gamma_lower;
            let lo = range.gamma_lower + 0.05 * span;
            let hi = range.gamma_upper - 0.05 * span;
            (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect()
        }
        GridChoice::Points(p) => {
            for &gamma in &p {
                if gamma <= range.gamma_lower || gamma >= range.gamma_upper {
                    return Err(InferenceError::Domain(format!(
                        "grid point {gamma} outside the open feasible range \
                         ({}, {})",
                        range.gamma_lower, range.gamma_upper
                    )));
                }
            }
            p
        }
    };

    // The curved MLE shared by the whole ray.
    let x = design.matrix();
    let (theta_hat, mu_hat, _) = poisson_solve(x, s, None, opts)?;
    let mass: f64 = mu_hat.iter().sum();
    if mass.ln().abs() > 1e-6 {
        return Err(InferenceError::Domain(format!(
            "statistic is not the fitted mean of any curved MLE (total mass {mass})"
        )));
    }

    let nf = n as f64;
    let dm_of = |theta_g: &[f64], g_val: f64, gamma: f64| -> f64 {
        let diff: Vec<f64> = theta_g.iter().zip(&theta_hat).map(|(a, b)| a - b).collect();
        2.0 * nf * (dot(s, &diff) / gamma - g_val)
    };

    let mut gammas = Vec::with_capacity(points.len());
    let mut dms = Vec::with_capacity(points.len());
    let mut gs = Vec::with_capacity(points.len());
    let mut failures = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for &gamma in &points {
        let target: Vec<f64> = s.iter().map(|v| v / gamma).collect();
        match fit_loglinear(design, &target, warm.as_deref(), opts) {
            Ok(fit) => {
                warm = Some(fit.theta.clone());
                gammas.push(gamma);
                gs.push(fit.log_normalizer);
                dms.push(dm_of(&fit.theta, fit.log_normalizer, gamma));
            }
            Err(e) => failures.push((gamma, e.to_string())),
        }
    }
    if gammas.len() < 2 {
        return Err(InferenceError::Domain(
            "too few grid points produced a converged inner fit".into(),
        ));
    }

    let q = quantile_chisq1(1.0 - level)?;
    let dm_fun = |gamma: f64| -> f64 {
        let target: Vec<f64> = s.iter().map(|v| v / gamma).collect();
        match fit_loglinear(design, &target, None, opts) {
            Ok(fit) => dm_of(&fit.theta, fit.log_normalizer, gamma),
            Err(_) => f64::INFINITY,
        }
    };
    // D_M vanishes at gamma = 1 and grows toward both feasible endpoints, so
    // each confidence bound is a sign change of D_M - q on one side of 1.
    let lr_lo = bisect_crossing(&dm_fun, q, range.gamma_lower + 1e-9, 1.0, true);
    let lr_hi = bisect_crossing(&dm_fun, q, 1.0, range.gamma_upper - 1e-9, false);

    Ok(ProfileCurve {
        gamma: gammas,
        d_m: dms,
        g: gs,
        lr_interval: (lr_lo, lr_hi),
        gamma_lower: range.gamma_lower,
        gamma_upper: range.gamma_upper,
        level,
        failures,
    })
}

/// Locates the gamma where `f(gamma) = q` between `lo` and `hi`, given that
/// `f` is above `q` at the outer end and below at the inner end; falls back
/// to the outer end when there is no crossing (interval clipped by
/// feasibility).
fn bisect_crossing(f: &dyn Fn(f64) -> f64, q: f64, lo: f64, hi: f64, left_side: bool) -> f64 {
    let (mut inner, mut outer) = if left_side { (hi, lo) } else { (lo, hi) };
    if f(outer) <= q {
        return outer;
    }
    for _ in 0..60 {
        let mid = 0.5 * (inner + outer);
        if f(mid) <= q {
            inner = mid;
        } else {
            outer = mid;
        }
        if (inner - outer).abs() <= 1e-7 {
            break;
        }
    }
    0.5 * (inner + outer)
}

/// Slope of the scaling factor for fixed statistic: `-s' F^{-1} s / gamma^3`.
///
/// Used as a diagnostic; the mean target is `s/gamma`, whose derivative in
/// gamma contributes the extra negative power.
pub fn scaling_factor_slope(gamma: f64, info: &FisherInfo, s: &[f64]) -> f64 {
    -dot(s, &info.solve(s)) / gamma.powi(3)
}
