//! Cholesky factorization and solves for symmetric positive definite systems.

use super::{Matrix, NumericsError};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Factorization failure (a non-positive pivot) is reported, never silent:
/// in this crate it signals an information matrix degenerating as the
/// probability vector approaches the boundary of the simplex.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    // Row-major lower triangle, full n x n storage for simplicity.
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self, NumericsError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(NumericsError::DimensionMismatch(format!(
                "Cholesky needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a.get(i, j);
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(NumericsError::NotPositiveDefinite { pivot: s, index: i });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `A x = b` given the factor `A = L L'`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        let n = self.n;
        let mut y = b.to_vec();
        // Forward: L y = b.
        for i in 0..n {
            for j in 0..i {
                y[i] -= self.l[i * n + j] * y[j];
            }
            y[i] /= self.l[i * n + i];
        }
        // Backward: L' x = y.
        for i in (0..n).rev() {
            for j in i + 1..n {
                y[i] -= self.l[j * n + i] * y[j];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }

    /// log det(A) = 2 sum log L_ii; occasionally useful for diagnostics.
    pub fn log_det(&self) -> f64 {
        (0..self.n)
            .map(|i| self.l[i * self.n + i].ln())
            .sum::<f64>()
            * 2.0
    }
}

/// One-shot solve of a symmetric positive definite system.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    Ok(Cholesky::factor(a)?.solve(b))
}
