//! Design-matrix validation, the canonical constraint system, and the
//! multivariate-logistic canonical parametrization of the multinomial.
//!
//! A valid design is an `r x k` 0/1 matrix of full column rank whose column
//! span excludes the all-ones vector and whose rows are all nonempty. The
//! model it defines, `log pi = X theta` with no normalizing intercept, only
//! makes sense on incomplete tables: an all-zero row would force that cell's
//! probability to `exp(0) = 1`.

use crate::numerics::{self, norm2, Cholesky, Matrix, NumericsError};
use crate::tol;
use thiserror::Error;

/// One failed validation condition on a candidate design matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignViolation {
    NonBinaryEntry { row: usize, col: usize, value: f64 },
    RankDeficient { cols: usize },
    OnesInColumnSpan { residual: f64 },
    ZeroRow { row: usize },
}

impl std::fmt::Display for DesignViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NonBinaryEntry { row, col, value } => write!(
                f,
                "entry ({row},{col}) is {value}, but design entries must be 0 or 1"
            ),
            Self::RankDeficient { cols } => {
                write!(f, "the {cols} columns are linearly dependent")
            }
            Self::OnesInColumnSpan { residual } => write!(
                f,
                "the all-ones vector lies in the column span (projection residual {residual:.3e}); \
                 the model would then contain an overall effect"
            ),
            Self::ZeroRow { row } => write!(
                f,
                "row {row} is all zeros, which would force that cell's probability to \
                 exp(0) = 1; cells with empty design rows must be removed, so the model \
                 applies only to incomplete tables"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid design matrix: {}", format_violations(.0))]
    InvalidDesign(Vec<DesignViolation>),
    #[error("probability vector entry {index} is {value}; all entries must be positive")]
    NonPositiveProbability { index: usize, value: f64 },
    #[error(
        "internal contradiction: every annihilator row sums to zero although the \
         all-ones vector is outside the column span; design validation is broken"
    )]
    InternalContradiction,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl crate::ClassifiedError for ModelError {
    fn class(&self) -> crate::ErrorClass {
        match self {
            Self::InvalidDesign(_) | Self::NonPositiveProbability { .. } => {
                crate::ErrorClass::Validation
            }
            Self::InternalContradiction => crate::ErrorClass::Internal,
            Self::Numerics(e) => e.class(),
        }
    }
}

fn format_violations(v: &[DesignViolation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// A certified 0/1 design matrix.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: Matrix,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Number of cells.
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    /// Number of log-linear parameters.
    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

/// Validates all four design conditions, reporting every violated one.
pub fn validate_design(x: &Matrix) -> Result<DesignMatrix, ModelError> {
    let mut violations = Vec::new();
    let (r, k) = (x.rows(), x.cols());

    for i in 0..r {
        for j in 0..k {
            let v = x.get(i, j);
            if v != 0.0 && v != 1.0 {
                violations.push(DesignViolation::NonBinaryEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    for i in 0..r {
        if x.row(i).iter().all(|&v| v == 0.0) {
            violations.push(DesignViolation::ZeroRow { row: i });
        }
    }

    let full_rank = r >= k && has_full_column_rank(x);
    if !full_rank {
        violations.push(DesignViolation::RankDeficient { cols: k });
    } else {
        // Least-squares projection of the all-ones vector onto col(X); the
        // residual must be clearly nonzero for the model to lack an overall
        // effect.
        let ones = vec![1.0; r];
        let gram = x.transpose().matmul(x);
        if let Ok(chol) = Cholesky::factor(&gram) {
            let beta = chol.solve(&x.tr_matvec(&ones));
            let fitted = x.matvec(&beta);
            let resid: Vec<f64> = ones.iter().zip(&fitted).map(|(a, b)| a - b).collect();
            let rnorm = norm2(&resid);
            if rnorm <= tol::ONES_SPAN_TOL * (r as f64).sqrt() {
                violations.push(DesignViolation::OnesInColumnSpan { residual: rnorm });
            }
        } else {
            violations.push(DesignViolation::RankDeficient { cols: k });
        }
    }

    if violations.is_empty() {
        Ok(DesignMatrix { matrix: x.clone() })
    } else {
        Err(ModelError::InvalidDesign(violations))
    }
}

fn has_full_column_rank(x: &Matrix) -> bool {
    numerics::null_space_basis(x, tol::NULLSPACE_TOL)
        .map(|_| true)
        .unwrap_or_else(|e| {
            // A square full-rank matrix has no left null space but is still
            // full column rank.
            matches!(e, NumericsError::DimensionMismatch(_)) && x.rows() == x.cols()
        })
}

/// The canonical constraint pair: a row `c` with `c'1 = -1` and a matrix `H`
/// of row contrasts (`H 1 = 0`), together annihilating the design.
///
/// `pi` satisfies the model iff `C log pi = 0` where `C` stacks `c'` on `H`;
/// the `c` row carries the non-homogeneous normalization constraint and `H`
/// the ordinary log-linear ones.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    c: Vec<f64>,
    h: Option<Matrix>,
    full: Matrix,
}

impl ConstraintSystem {
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// The contrast rows; `None` when `r - k - 1 = 0`.
    pub fn h(&self) -> Option<&Matrix> {
        self.h.as_ref()
    }

    /// The full `(r-k) x r` constraint matrix, `c'` stacked on `H`.
    pub fn full(&self) -> &Matrix {
        &self.full
    }

    /// `max_a |C log(pi)|_a`, the model-violation residual of a positive vector.
    pub fn log_residual(&self, pi: &[f64]) -> Result<f64, ModelError> {
        let logs = positive_log(pi)?;
        Ok(numerics::norm_inf(&self.full.matvec(&logs)))
    }
}

/// Builds the canonical constraint system from any full-rank left annihilator
/// of the design: pick the annihilator row with the largest absolute row sum,
/// rescale it so it sums to -1, and sweep the remaining rows to contrasts.
pub fn constraint_canonical(dm: &DesignMatrix) -> Result<ConstraintSystem, ModelError> {
    let x = dm.matrix();
    let r = x.rows();
    let basis = numerics::null_space_basis(x, tol::NULLSPACE_TOL)?;
    let m = basis.rows();

    let sums: Vec<f64> = (0..m).map(|i| basis.row(i).iter().sum()).collect();
    let (pivot, pivot_sum) = sums
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, &s)| (i, s))
        .expect("annihilator has at least one row");
    if pivot_sum.abs() <= 1e-12 * (r as f64).sqrt() {
        // Impossible when the all-ones vector is outside col(X).
        return Err(ModelError::InternalContradiction);
    }

    let c: Vec<f64> = basis.row(pivot).iter().map(|v| -v / pivot_sum).collect();
    let mut h_rows: Vec<Vec<f64>> = Vec::with_capacity(m - 1);
    for i in 0..m {
        if i == pivot {
            continue;
        }
        let scale = sums[i] / pivot_sum;
        let row: Vec<f64> = basis
            .row(i)
            .iter()
            .zip(basis.row(pivot))
            .map(|(a, p)| a - p * scale)
            .collect();
        h_rows.push(row);
    }

    let c_mat = Matrix::new(1, r, c.clone())?;
    let (h, full) = if h_rows.is_empty() {
        (None, c_mat)
    } else {
        let h = Matrix::from_rows(&h_rows)?;
        let full = c_mat.vstack(&h);
        (Some(h), full)
    };
    Ok(ConstraintSystem { c, h, full })
}

/// A full-rank basis `G` for the multivariate logistic transform together
/// with its left inverse `D` (`D G = I`, `D 1 = 0`) and the centering
/// projector.
#[derive(Debug, Clone)]
pub struct CanonicalBasis {
    g: Matrix,
    d: Matrix,
    projector: Matrix,
    /// Number of leading columns of `G` coming from a design, when built
    /// from one; the remaining canonical coordinates form the eta block.
    design_cols: Option<usize>,
}

impl CanonicalBasis {
    /// Default basis: the identity with its first column dropped.
    pub fn standard(r: usize) -> Result<Self, ModelError> {
        if r < 2 {
            return Err(ModelError::Numerics(NumericsError::Domain(
                "canonical basis needs at least two cells".into(),
            )));
        }
        let mut g = Matrix::zeros(r, r - 1);
        for j in 0..r - 1 {
            g.set(j + 1, j, 1.0);
        }
        Self::build(g, None)
    }

    /// Partitioned basis `G = (X Z)` with `Z' R X = 0`, so that for any
    /// `pi` in the model the trailing (eta) block of canonical parameters
    /// vanishes and the leading block equals `theta`.
    pub fn from_design(dm: &DesignMatrix) -> Result<Self, ModelError> {
        let x = dm.matrix();
        let (r, k) = (x.rows(), x.cols());
        let projector = centering_projector(r);
        let rx = projector.matmul(x);
        if r == k + 1 {
            return Self::build(x.clone(), Some(k));
        }
        // Z spans the orthogonal complement of col(R X) within 1-perp.
        let ones = Matrix::new(r, 1, vec![1.0; r])?;
        let z_rows = numerics::null_space_basis(&rx.hstack(&ones), tol::NULLSPACE_TOL)?;
        let g = x.hstack(&z_rows.transpose());
        Self::build(g, Some(k))
    }

    fn build(g: Matrix, design_cols: Option<usize>) -> Result<Self, ModelError> {
        let r = g.rows();
        let projector = centering_projector(r);
        // D = (G' R G)^{-1} G' R.
        let gr = g.transpose().matmul(&projector);
        let chol = Cholesky::factor(&gr.matmul(&g))?;
        let mut d = Matrix::zeros(r - 1, r);
        for j in 0..r {
            let col = chol.solve(&gr.col(j));
            for i in 0..r - 1 {
                d.set(i, j, col[i]);
            }
        }
        Ok(Self {
            g,
            d,
            projector,
            design_cols,
        })
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn projector(&self) -> &Matrix {
        &self.projector
    }

    pub fn design_cols(&self) -> Option<usize> {
        self.design_cols
    }
}

fn centering_projector(r: usize) -> Matrix {
    let mut p = Matrix::identity(r);
    let off = 1.0 / r as f64;
    for i in 0..r {
        for j in 0..r {
            p.set(i, j, p.get(i, j) - off);
        }
    }
    p
}

/// Canonical parameters `lambda = D log pi` of a positive vector.
///
/// Because `D 1 = 0`, rescaling `pi` by any positive constant leaves the
/// result unchanged, so unnormalized intensity vectors are accepted.
pub fn canonical_params(pi: &[f64], basis: &CanonicalBasis) -> Result<Vec<f64>, ModelError> {
    let logs = positive_log(pi)?;
    Ok(basis.d.matvec(&logs))
}

fn positive_log(pi: &[f64]) -> Result<Vec<f64>, ModelError> {
    pi.iter()
        .enumerate()
        .map(|(index, &value)| {
            if value > 0.0 && value.is_finite() {
                Ok(value.ln())
            } else {
                Err(ModelError::NonPositiveProbability { index, value })
            }
        })
        .collect()
}
