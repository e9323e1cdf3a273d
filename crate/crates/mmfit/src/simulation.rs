//! Monte Carlo rejection-rate study under a null distribution in the model.
//!
//! Each replication draws multinomial counts from the null, fits the
//! log-linear and curved models, computes the three one-df statistics and
//! compares them to chi-square(1) quantiles. Replications carry their own
//! random stream derived from the master seed and the replication index, and
//! aggregation runs in fixed index order, so results are bit-identical
//! whatever the thread count.

use crate::curved::fit_curved_newton;
use crate::inference::{asymptotic_variances, deviance_curved, score_and_gamma_statistics};
use crate::loglinear::{fit_loglinear, FitOptions};
use crate::model::{constraint_canonical, validate_design, DesignMatrix, ModelError};
use crate::numerics::{chisq_sf, multinomial_draw, Matrix, NumericsError, RngStream};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(
        "{failures} of {reps} replications failed to converge, above the 0.1% budget; \
         the null distribution or sample size is unsuitable"
    )]
    ExcessFailures { failures: usize, reps: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl crate::ClassifiedError for SimError {
    fn class(&self) -> crate::ErrorClass {
        match self {
            Self::Config(_) => crate::ErrorClass::Validation,
            Self::ExcessFailures { .. } => crate::ErrorClass::ExcessFailures,
            Self::Model(e) => e.class(),
            Self::Numerics(e) => e.class(),
        }
    }
}

/// Quantile of the chi-square distribution with one degree of freedom at
/// upper tail mass `level`, by bisection on the survival function.
pub fn quantile_chisq1(level: f64) -> Result<f64, NumericsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(NumericsError::Domain(format!(
            "tail mass must be inside (0,1), got {level}"
        )));
    }
    let mut hi = 1.0;
    while chisq_sf(hi, 1)? > level {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(NumericsError::Domain(format!(
                "quantile out of range for tail mass {level}"
            )));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if chisq_sf(mid, 1)? > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Study configuration; the JSON on disk mirrors these fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Null distribution; must satisfy the model constraints.
    pub null_pi: Vec<f64>,
    /// Design matrix as rows of 0/1 entries.
    pub design: Vec<Vec<f64>>,
    pub sample_sizes: Vec<u64>,
    pub replications: usize,
    /// Nominal rejection levels, e.g. [0.10, 0.05, 0.01].
    pub levels: Vec<f64>,
    pub master_seed: u64,
}

impl SimConfig {
    /// Validates the design and the null distribution, returning the
    /// certified design for use in the run.
    pub fn validate(&self) -> Result<DesignMatrix, SimError> {
        let x = Matrix::from_rows(&self.design)
            .map_err(|e| SimError::Config(format!("design: {e}")))?;
        let design = validate_design(&x)?;
        if self.null_pi.len() != design.rows() {
            return Err(SimError::Config(format!(
                "null distribution has {} cells, design has {} rows",
                self.null_pi.len(),
                design.rows()
            )));
        }
        if self.null_pi.iter().any(|&p| !(p > 0.0)) {
            return Err(SimError::Config(
                "null distribution must be strictly positive".into(),
            ));
        }
        let total: f64 = self.null_pi.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(SimError::Config(format!(
                "null distribution must sum to 1 (off by {:.3e})",
                total - 1.0
            )));
        }
        let cs = constraint_canonical(&design)?;
        let resid = cs.log_residual(&self.null_pi)?;
        if resid > 1e-8 {
            return Err(SimError::Config(format!(
                "null distribution violates the model constraints \
                 (max |C log pi| = {resid:.3e} > 1e-8)"
            )));
        }
        if self.replications == 0 {
            return Err(SimError::Config("replications must be positive".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(SimError::Config(
                "sample sizes must be positive and nonempty".into(),
            ));
        }
        if self.levels.is_empty() || self.levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            return Err(SimError::Config(
                "levels must be nonempty and inside (0,1)".into(),
            ));
        }
        Ok(design)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    DM,
    L,
    G,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::DM, Statistic::L, Statistic::G];

    pub fn label(self) -> &'static str {
        match self {
            Statistic::DM => "D_M",
            Statistic::L => "L",
            Statistic::G => "G",
        }
    }
}

/// Rejection rate of one statistic at one level for one sample size.
#[derive(Debug, Clone, Serialize)]
pub struct RateCell {
    pub level: f64,
    pub statistic: Statistic,
    pub rejections: usize,
    pub rate: f64,
    /// Monte Carlo standard error `sqrt(rate (1-rate) / successes)`.
    pub mc_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeResult {
    pub n: u64,
    pub successes: usize,
    pub failures: usize,
    pub cells: Vec<RateCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub replications: usize,
    pub master_seed: u64,
    pub levels: Vec<f64>,
    pub rows: Vec<SizeResult>,
}

/// One replication: draw, fit both models, return the three statistics.
fn replicate(
    design: &DesignMatrix,
    null_pi: &[f64],
    n: u64,
    rng: &mut RngStream,
    opts: &FitOptions,
) -> Option<[f64; 3]> {
    let y = multinomial_draw(n, null_pi, rng).ok()?;
    let total: u64 = y.iter().sum();
    if total == 0 {
        return None;
    }
    let p: Vec<f64> = y.iter().map(|&v| v as f64 / total as f64).collect();
    let t = design.matrix().tr_matvec(&p);
    let lin = fit_loglinear(design, &t, None, opts).ok()?;
    let fit = fit_curved_newton(design, &y, opts).ok()?;
    let d_m = deviance_curved(&y, &lin.pi, &fit.pi).ok()?;
    let (var_alpha, var_gamma) = asymptotic_variances(&fit.pi, design, total, fit.gamma).ok()?;
    let (l, g) = score_and_gamma_statistics(fit.gamma, fit.alpha, var_alpha, var_gamma);
    Some([d_m, l, g])
}

/// Runs the full study on `threads` worker threads (1 = serial).
pub fn run_simulation(cfg: &SimConfig, threads: usize) -> Result<SimResult, SimError> {
    let design = cfg.validate()?;
    let opts = FitOptions::default();
    let reps = cfg.replications;
    let threads = threads.max(1);

    let quantiles: Vec<f64> = cfg
        .levels
        .iter()
        .map(|&l| quantile_chisq1(l))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(cfg.sample_sizes.len());
    for (size_idx, &n) in cfg.sample_sizes.iter().enumerate() {
        let mut outcomes: Vec<Option<[f64; 3]>> = vec![None; reps];
        let stream_base = (size_idx * reps) as u64;
        let chunk = reps.div_ceil(threads);
        std::thread::scope(|scope| {
            for (c, slot) in outcomes.chunks_mut(chunk).enumerate() {
                let design = &design;
                let null_pi = &cfg.null_pi;
                let opts = &opts;
                scope.spawn(move || {
                    for (i, out) in slot.iter_mut().enumerate() {
                        let rep = c * chunk + i;
                        let mut rng =
                            RngStream::new(cfg.master_seed, stream_base + rep as u64);
                        *out = replicate(design, null_pi, n, &mut rng, opts);
                    }
                });
            }
        });

        let successes = outcomes.iter().flatten().count();
        let failures = reps - successes;
        if failures * 1000 > reps {
            return Err(SimError::ExcessFailures { failures, reps });
        }
        let mut cells = Vec::with_capacity(cfg.levels.len() * 3);
        for (&level, &q) in cfg.levels.iter().zip(&quantiles) {
            for (si, stat) in Statistic::ALL.into_iter().enumerate() {
                let rejections = outcomes
                    .iter()
                    .flatten()
                    .filter(|vals| vals[si] > q)
                    .count();
                let rate = rejections as f64 / successes as f64;
                let mc_se = (rate * (1.0 - rate) / successes as f64).sqrt();
                cells.push(RateCell {
                    level,
                    statistic: stat,
                    rejections,
                    rate,
                    mc_se,
                });
            }
        }
        rows.push(SizeResult {
            n,
            successes,
            failures,
            cells,
        });
    }

    Ok(SimResult {
        replications: reps,
        master_seed: cfg.master_seed,
        levels: cfg.levels.clone(),
        rows,
    })
}
