//! Householder QR factorization and orthonormal null-space bases.

use super::{Matrix, NumericsError};

/// Householder QR of an `r x k` matrix with `r >= k`.
///
/// Returns the full orthogonal factor `Q` (`r x r`) and the diagonal of `R`,
/// which is all that rank detection and null-space extraction need.
pub(crate) fn householder_qr(m: &Matrix) -> (Matrix, Vec<f64>) {
    let r = m.rows();
    let k = m.cols();
    assert!(r >= k, "householder_qr requires rows >= cols");

    let mut a = m.clone();
    let mut q = Matrix::identity(r);
    let mut rdiag = vec![0.0; k];

    for j in 0..k {
        // Householder vector for column j below the diagonal.
        let mut norm = 0.0;
        for i in j..r {
            norm = f64::hypot(norm, a.get(i, j));
        }
        if norm == 0.0 {
            rdiag[j] = 0.0;
            continue;
        }
        let alpha = if a.get(j, j) >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; r];
        for i in j..r {
            v[i] = a.get(i, j);
        }
        v[j] -= alpha;
        let vtv: f64 = v[j..].iter().map(|x| x * x).sum();
        rdiag[j] = alpha;
        if vtv == 0.0 {
            continue;
        }

        // Apply H = I - 2vv'/v'v to the remaining columns of A.
        for c in j..k {
            let s: f64 = (j..r).map(|i| v[i] * a.get(i, c)).sum();
            let f = 2.0 * s / vtv;
            for i in j..r {
                let val = a.get(i, c) - f * v[i];
                a.set(i, c, val);
            }
        }
        // Accumulate Q <- Q * H (right-multiplication keeps Q = H0 H1 ...).
        for row in 0..r {
            let s: f64 = (j..r).map(|i| v[i] * q.get(row, i)).sum();
            let f = 2.0 * s / vtv;
            for i in j..r {
                let val = q.get(row, i) - f * v[i];
                q.set(row, i, val);
            }
        }
    }
    (q, rdiag)
}

/// Orthonormal basis of the left null space `{b : b'M = 0}` of a full
/// column-rank `r x k` matrix, returned as the rows of an `(r-k) x r` matrix.
///
/// `tol` is the relative pivot threshold for rank detection; rank deficiency
/// is reported as an error rather than silently returning a larger basis.
pub fn null_space_basis(m: &Matrix, tol: f64) -> Result<Matrix, NumericsError> {
    let r = m.rows();
    let k = m.cols();
    if k > r {
        return Err(NumericsError::DimensionMismatch(format!(
            "null_space_basis requires rows >= cols, got {}x{}",
            r, k
        )));
    }
    let (q, rdiag) = householder_qr(m);
    let threshold = tol * m.norm_inf().max(f64::MIN_POSITIVE);
    for &p in &rdiag {
        if p.abs() <= threshold {
            return Err(NumericsError::RankDeficient {
                pivot: p.abs(),
                threshold,
            });
        }
    }
    if r == k {
        return Err(NumericsError::DimensionMismatch(
            "square full-rank matrix has a trivial left null space".into(),
        ));
    }
    // Trailing r-k columns of Q span the left null space; take them as rows.
    let mut b = Matrix::zeros(r - k, r);
    for i in 0..r - k {
        for j in 0..r {
            b.set(i, j, q.get(j, k + i));
        }
    }
    Ok(b)
}
