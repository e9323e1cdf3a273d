//! The inner problem: fit the normalized log-linear model
//! `pi(theta) = exp(X theta) / 1'exp(X theta)` so that its mean parameter
//! `X' pi` matches a target, by Newton steps on the mixed parametrization.
//!
//! The canonical component `H log pi = 0` holds identically in this
//! parametrization, so only the mean component is iterated. The map between
//! the mean parameter and `theta` is one to one, which is what makes the
//! outer adjustment-factor search of the curved fitter well defined.

use crate::model::DesignMatrix;
use crate::numerics::{self, log_sum_exp, norm_inf, Cholesky, Matrix, NumericsError};
use crate::tol;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogLinearError {
    #[error("target mean parameter {0:?} is not reproducible by any probability vector")]
    InfeasibleTarget(Vec<f64>),
    #[error(
        "inner solver did not converge within {iterations} iterations \
         (last mean residual {residual:.3e})"
    )]
    NonConvergence { residual: f64, iterations: usize },
    #[error("probability vector reached the simplex boundary (cell {index})")]
    Boundary { index: usize },
    #[error("information matrix is numerically singular: {0}")]
    SingularInformation(NumericsError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl crate::ClassifiedError for LogLinearError {
    fn class(&self) -> crate::ErrorClass {
        use crate::ErrorClass;
        match self {
            Self::InfeasibleTarget(_) => ErrorClass::Feasibility,
            Self::NonConvergence { .. } | Self::Boundary { .. } | Self::SingularInformation(_) => {
                ErrorClass::Convergence
            }
            Self::Dimension(_) | Self::InvalidCounts(_) => ErrorClass::Validation,
            Self::Numerics(e) => e.class(),
        }
    }
}

/// Solver knobs; the command line exposes these with the same defaults.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub inner_tol: f64,
    pub max_inner: usize,
    pub max_halvings: usize,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub gamma_start: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            inner_tol: tol::INNER_TOL,
            max_inner: tol::MAX_INNER_ITER,
            max_halvings: tol::MAX_HALVINGS,
            outer_tol: tol::OUTER_TOL,
            max_outer: tol::MAX_OUTER_ITER,
            gamma_start: 1.0,
        }
    }
}

/// A converged inner fit.
#[derive(Debug, Clone)]
pub struct LogLinearFit {
    pub theta: Vec<f64>,
    pub pi: Vec<f64>,
    /// Achieved mean parameter `X' pi`.
    pub tau: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    /// `log(1' exp(X theta))`, the scaling factor of the unnormalized fit.
    pub log_normalizer: f64,
}

/// Fisher information of the mean parameter,
/// `F = X' [diag(pi) - pi pi'] X`, with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct FisherInfo {
    matrix: Matrix,
    chol: Cholesky,
}

impl FisherInfo {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.chol.solve(rhs)
    }
}

/// Builds the information matrix at an interior probability vector; its
/// Cholesky factorization doubles as the positive-definiteness certificate.
pub fn fisher_info(pi: &[f64], design: &DesignMatrix) -> Result<FisherInfo, LogLinearError> {
    fisher_info_of(pi, design.matrix())
}

pub(crate) fn fisher_info_of(pi: &[f64], x: &Matrix) -> Result<FisherInfo, LogLinearError> {
    if pi.len() != x.rows() {
        return Err(LogLinearError::Dimension(format!(
            "probability vector has {} cells, design has {} rows",
            pi.len(),
            x.rows()
        )));
    }
    if let Some(index) = pi.iter().position(|&p| p <= 1e-300) {
        return Err(LogLinearError::Boundary { index });
    }
    let k = x.cols();
    let tau = x.tr_matvec(pi);
    let mut f = Matrix::zeros(k, k);
    for (j, &w) in pi.iter().enumerate() {
        let row = x.row(j);
        for a in 0..k {
            let wa = w * row[a];
            if wa == 0.0 {
                continue;
            }
            for b in 0..k {
                let v = f.get(a, b) + wa * row[b];
                f.set(a, b, v);
            }
        }
    }
    for a in 0..k {
        for b in 0..k {
            f.set(a, b, f.get(a, b) - tau[a] * tau[b]);
        }
    }
    let chol = Cholesky::factor(&f).map_err(LogLinearError::SingularInformation)?;
    Ok(FisherInfo { matrix: f, chol })
}

/// Normalized probabilities and log normalizer at `theta`.
pub(crate) fn softmax_at(x: &Matrix, theta: &[f64]) -> (f64, Vec<f64>) {
    log_sum_exp(&x.matvec(theta))
}

/// Fits the log-linear model to a target mean parameter.
///
/// Iterates `theta <- theta + F^{-1} (target - X' pi)` from `theta0`
/// (default zero, the uniform distribution), halving the step whenever the
/// full step fails to reduce the residual norm. The target must lie in the
/// convex hull of the design rows, which is verified up front by a phase-one
/// linear program.
pub fn fit_loglinear(
    design: &DesignMatrix,
    tau_target: &[f64],
    theta0: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<LogLinearFit, LogLinearError> {
    let x = design.matrix();
    let k = design.cols();
    if tau_target.len() != k {
        return Err(LogLinearError::Dimension(format!(
            "target has length {}, design has {} columns",
            tau_target.len(),
            k
        )));
    }
    if !numerics::simplex_feasible(x, tau_target, tol::LP_TOL) {
        return Err(LogLinearError::InfeasibleTarget(tau_target.to_vec()));
    }

    let mut theta = theta0.map_or_else(|| vec![0.0; k], <[f64]>::to_vec);
    if theta.len() != k {
        return Err(LogLinearError::Dimension(
            "starting value has the wrong length".into(),
        ));
    }
    let (mut log_norm, mut pi) = softmax_at(x, &theta);
    let residual = |p: &[f64]| -> Vec<f64> {
        tau_target
            .iter()
            .zip(x.tr_matvec(p))
            .map(|(t, m)| t - m)
            .collect()
    };
    let mut resid = residual(&pi);
    let mut rnorm = norm_inf(&resid);

    let mut iterations = 0;
    while rnorm > opts.inner_tol {
        if iterations >= opts.max_inner {
            return Err(LogLinearError::NonConvergence {
                residual: rnorm,
                iterations,
            });
        }
        let info = fisher_info_of(&pi, x)?;
        let delta = info.solve(&resid);

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&delta)
                .map(|(t, d)| t + step * d)
                .collect();
            let (ln_cand, pi_cand) = softmax_at(x, &cand);
            let resid_cand = residual(&pi_cand);
            let rn_cand = norm_inf(&resid_cand);
            if rn_cand < rnorm {
                theta = cand;
                pi = pi_cand;
                log_norm = ln_cand;
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

    // One polishing step: quadratic convergence pushes the residual to the
    // floating-point floor, which keeps downstream reads of the log
    // normalizer stable. Kept only if it actually improves.
    if let Ok(info) = fisher_info_of(&pi, x) {
        let delta = info.solve(&resid);
        let cand: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
        let (ln_cand, pi_cand) = softmax_at(x, &cand);
        let resid_cand = residual(&pi_cand);
        let rn_cand = norm_inf(&resid_cand);
        if rn_cand < rnorm {
            theta = cand;
            pi = pi_cand;
            log_norm = ln_cand;
            rnorm = rn_cand;
        }
    }

    let tau = x.tr_matvec(&pi);
    Ok(LogLinearFit {
        theta,
        pi,
        tau,
        iterations,
        final_residual: rnorm,
        log_normalizer: log_norm,
    })
}

/// Deviance of observed counts against a fitted probability vector:
/// `2 y' [log(y/n) - log(pi)]` with the `0 log 0 = 0` convention.
pub fn deviance_loglinear(y: &[u64], pi: &[f64]) -> Result<f64, LogLinearError> {
    if y.len() != pi.len() {
        return Err(LogLinearError::Dimension(format!(
            "counts have {} cells, fit has {}",
            y.len(),
            pi.len()
        )));
    }
    let n: u64 = y.iter().sum();
    if n == 0 {
        return Err(LogLinearError::InvalidCounts(
            "total count is zero".into(),
        ));
    }
    if let Some(index) = pi.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(LogLinearError::Boundary { index });
    }
    let nf = n as f64;
    let mut dev = 0.0;
    for (&yj, &pj) in y.iter().zip(pi) {
        if yj > 0 {
            let yf = yj as f64;
            dev += yf * ((yf / nf).ln() - pj.ln());
        }
    }
    Ok(2.0 * dev)
}

/// Log-likelihood `y' log pi` of counts under a probability vector.
pub fn log_likelihood(y: &[u64], pi: &[f64]) -> f64 {
    y.iter()
        .zip(pi)
        .filter(|(&yj, _)| yj > 0)
        .map(|(&yj, &pj)| yj as f64 * pj.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_design;
    use crate::numerics::dot;

    fn four_cell() -> DesignMatrix {
        validate_design(
            &Matrix::from_rows(&[
                vec![1.0, 0.0, 0.0],
                vec![1.0, 1.0, 0.0],
                vec![1.0, 1.0, 1.0],
                vec![0.0, 1.0, 1.0],
            ])
            .unwrap(),
        )
        .unwrap()
    }

    fn basket() -> DesignMatrix {
        validate_design(
            &Matrix::from_rows(&[
                vec![0.0, 0.0, 1.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 1.0, 1.0],
                vec![1.0, 0.0, 0.0],
                vec![1.0, 0.0, 1.0],
                vec![1.0, 1.0, 0.0],
                vec![1.0, 1.0, 1.0],
            ])
            .unwrap(),
        )
        .unwrap()
    }

    const BASKET: [u64; 7] = [374, 3684, 233, 991, 41, 607, 46];

    #[test]
    fn bernoulli_variance_is_the_scalar_information() {
        // Single indicator column: F = Var of a Bernoulli(1/2) = 1/4.
        let x = Matrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let info = fisher_info_of(&[0.5, 0.5], &x).unwrap();
        assert!((info.matrix().get(0, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn information_matches_brute_force_summation() {
        let design = four_cell();
        let x = design.matrix();
        let r = x.rows();
        let k = x.cols();
        let pi = vec![1.0 / r as f64; r];
        let info = fisher_info(&pi, &design).unwrap();
        // Independent accumulation of sum_j pi_j x_j x_j' - (X'pi)(X'pi)'.
        let mut expect = vec![vec![0.0; k]; k];
        let mut mean = vec![0.0; k];
        for j in 0..r {
            for a in 0..k {
                mean[a] += pi[j] * x.get(j, a);
                for b in 0..k {
                    expect[a][b] += pi[j] * x.get(j, a) * x.get(j, b);
                }
            }
        }
        for a in 0..k {
            for b in 0..k {
                expect[a][b] -= mean[a] * mean[b];
                assert!((info.matrix().get(a, b) - expect[a][b]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn information_is_symmetric_positive_definite_on_fits() {
        let design = basket();
        let fit = fit_loglinear(
            &design,
            &stats_of(&design, &BASKET),
            None,
            &FitOptions::default(),
        )
        .unwrap();
        let info = fisher_info(&fit.pi, &design).unwrap();
        let m = info.matrix();
        for a in 0..m.rows() {
            for b in 0..m.cols() {
                assert!((m.get(a, b) - m.get(b, a)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn boundary_probability_is_rejected() {
        let design = four_cell();
        let pi = [0.5, 0.5, 0.0, 0.0];
        assert!(matches!(
            fisher_info(&pi, &design),
            Err(LogLinearError::Boundary { .. })
        ));
    }

    fn stats_of(design: &DesignMatrix, y: &[u64]) -> Vec<f64> {
        let n: u64 = y.iter().sum();
        let p: Vec<f64> = y.iter().map(|&v| v as f64 / n as f64).collect();
        design.matrix().tr_matvec(&p)
    }

    #[test]
    fn round_trip_recovers_known_theta() {
        let design = four_cell();
        let theta_star = [-0.4, -1.1, 0.3];
        let (_, pi) = softmax_at(design.matrix(), &theta_star);
        let target = design.matrix().tr_matvec(&pi);
        let fit = fit_loglinear(&design, &target, None, &FitOptions::default()).unwrap();
        for (got, want) in fit.theta.iter().zip(theta_star) {
            assert!((got - want).abs() <= 1e-8);
        }
        assert!((fit.pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(fit.final_residual <= tol::INNER_TOL);
    }

    #[test]
    fn basket_quasi_independence_deviance() {
        // Expected value frozen from an independent route: the margin
        // equations reduce to a scalar equation in the product parameter
        // P = s(1+a)(1+b)(1+c), solved by bisection, giving the fitted cells
        // in closed form and a deviance of 9.240170 (upper tail 0.0554 on
        // four degrees of freedom).
        let design = basket();
        let target = stats_of(&design, &BASKET);
        let fit = fit_loglinear(&design, &target, None, &FitOptions::default()).unwrap();
        let dev = deviance_loglinear(&BASKET, &fit.pi).unwrap();
        assert!((dev - 9.240170).abs() <= 1e-5, "deviance {dev}");
    }

    #[test]
    fn matches_coordinate_descent_oracle() {
        // Brute-force maximizer of target'theta - log(1'exp(X theta)) by
        // per-coordinate golden-section search; independent of the Newton path.
        let design = four_cell();
        let x = design.matrix();
        let mut rng = crate::numerics::RngStream::new(314, 0);
        for _ in 0..5 {
            let mut p: Vec<f64> = (0..4).map(|_| rng.uniform() + 0.05).collect();
            let s: f64 = p.iter().sum();
            for v in &mut p {
                *v /= s;
            }
            let target = x.tr_matvec(&p);
            let objective = |theta: &[f64]| {
                let (logz, _) = softmax_at(x, theta);
                dot(&target, theta) - logz
            };
            let mut theta = vec![0.0; 3];
            for _sweep in 0..400 {
                for c in 0..3 {
                    let eval = |v: f64| {
                        let mut t = theta.clone();
                        t[c] = v;
                        objective(&t)
                    };
                    // Golden-section on a generous bracket around the current value.
                    let (mut lo, mut hi) = (theta[c] - 4.0, theta[c] + 4.0);
                    let phi = (5f64.sqrt() - 1.0) / 2.0;
                    for _ in 0..90 {
                        let m1 = hi - phi * (hi - lo);
                        let m2 = lo + phi * (hi - lo);
                        if eval(m1) < eval(m2) {
                            lo = m1;
                        } else {
                            hi = m2;
                        }
                    }
                    theta[c] = 0.5 * (lo + hi);
                }
            }
            let (_, pi_oracle) = softmax_at(x, &theta);
            let fit = fit_loglinear(&design, &target, None, &FitOptions::default()).unwrap();
            for (a, b) in fit.pi.iter().zip(&pi_oracle) {
                assert!((a - b).abs() <= 1e-4, "{:?} vs {:?}", fit.pi, pi_oracle);
            }
        }
    }

    #[test]
    fn mean_map_is_locally_invertible() {
        // Perturbing the target moves theta continuously, and refitting the
        // original target from the perturbed solution recovers theta.
        let design = basket();
        let opts = FitOptions::default();
        let target = stats_of(&design, &BASKET);
        let fit = fit_loglinear(&design, &target, None, &opts).unwrap();
        let mut nudged = target.clone();
        nudged[0] += 1e-4;
        nudged[2] -= 1e-4;
        let fit2 = fit_loglinear(&design, &nudged, Some(&fit.theta), &opts).unwrap();
        let drift: f64 = fit
            .theta
            .iter()
            .zip(&fit2.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift > 0.0 && drift < 0.05, "drift {drift}");
        let back = fit_loglinear(&design, &target, Some(&fit2.theta), &opts).unwrap();
        for (a, b) in fit.theta.iter().zip(&back.theta) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn fit_depends_only_on_the_sufficient_statistic() {
        // Two data vectors with equal X'p give identical fits; the fitted
        // probability vector itself is such a twin of the data.
        let design = basket();
        let target = stats_of(&design, &BASKET);
        let fit1 = fit_loglinear(&design, &target, None, &FitOptions::default()).unwrap();
        let target2 = design.matrix().tr_matvec(&fit1.pi);
        let fit2 = fit_loglinear(&design, &target2, None, &FitOptions::default()).unwrap();
        for (a, b) in fit1.pi.iter().zip(&fit2.pi) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn canonical_component_vanishes_for_any_target() {
        // Variation independence: the fitted vector always satisfies
        // H log pi = 0, whatever mean target was requested.
        let design = basket();
        let cs = crate::model::constraint_canonical(&design).unwrap();
        let h = cs.h().unwrap();
        let mut rng = crate::numerics::RngStream::new(7, 1);
        for _ in 0..20 {
            let mut p: Vec<f64> = (0..7).map(|_| rng.uniform() + 0.02).collect();
            let s: f64 = p.iter().sum();
            for v in &mut p {
                *v /= s;
            }
            let target = design.matrix().tr_matvec(&p);
            let fit = fit_loglinear(&design, &target, None, &FitOptions::default()).unwrap();
            let logs: Vec<f64> = fit.pi.iter().map(|v| v.ln()).collect();
            assert!(norm_inf(&h.matvec(&logs)) <= 1e-8);
        }
    }

    #[test]
    fn information_matches_finite_difference_jacobian() {
        let design = basket();
        let x = design.matrix();
        let mut rng = crate::numerics::RngStream::new(11, 2);
        let theta: Vec<f64> = (0..3).map(|_| -1.5 * rng.uniform()).collect();
        let (_, pi) = softmax_at(x, &theta);
        let info = fisher_info(&pi, &design).unwrap();
        let h = 1e-6;
        for b in 0..3 {
            let mut tp = theta.clone();
            tp[b] += h;
            let mut tm = theta.clone();
            tm[b] -= h;
            let (_, pip) = softmax_at(x, &tp);
            let (_, pim) = softmax_at(x, &tm);
            let taup = x.tr_matvec(&pip);
            let taum = x.tr_matvec(&pim);
            for a in 0..3 {
                let fd = (taup[a] - taum[a]) / (2.0 * h);
                let an = info.matrix().get(a, b);
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs().max(1e-3),
                    "d tau_{a} / d theta_{b}: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn infeasible_target_is_rejected_up_front() {
        let design = four_cell();
        assert!(matches!(
            fit_loglinear(&design, &[0.0, 0.0, 0.0], None, &FitOptions::default()),
            Err(LogLinearError::InfeasibleTarget(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence_with_residual() {
        let design = four_cell();
        let x = design.matrix();
        let p = [0.55, 0.25, 0.05, 0.15];
        let target = x.tr_matvec(&p);
        let opts = FitOptions {
            max_inner: 1,
            ..FitOptions::default()
        };
        match fit_loglinear(&design, &target, None, &opts) {
            Err(LogLinearError::NonConvergence {
                residual,
                iterations,
            }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 0.0 && residual.is_finite());
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn near_vertex_targets_fail_loudly_or_reach_tolerance() {
        // A vertex of the convex hull is LP-feasible but lies on the
        // boundary; the solver either meets the requested tolerance with a
        // near-degenerate fit or reports failure, never returns silently
        // with a bad residual.
        let design = four_cell();
        let target: Vec<f64> = design.matrix().row(0).to_vec();
        match fit_loglinear(&design, &target, None, &FitOptions::default()) {
            Ok(fit) => assert!(fit.final_residual <= tol::INNER_TOL),
            Err(
                LogLinearError::NonConvergence { .. }
                | LogLinearError::SingularInformation(_)
                | LogLinearError::Boundary { .. },
            ) => {}
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn deviance_conventions() {
        // Perfect fit has zero deviance.
        let y = [10u64, 30, 60];
        let pi = [0.1, 0.3, 0.6];
        assert!(deviance_loglinear(&y, &pi).unwrap().abs() <= 1e-12);
        // A zero count contributes nothing (0 log 0 = 0).
        let y0 = [0u64, 40, 60];
        let d = deviance_loglinear(&y0, &pi).unwrap();
        assert!(d.is_finite() && d > 0.0);
        // Degenerate input errors.
        assert!(deviance_loglinear(&[0, 0, 0], &pi).is_err());
        assert!(deviance_loglinear(&y, &[0.5, 0.5]).is_err());
    }
}
