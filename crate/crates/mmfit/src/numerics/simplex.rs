//! Dense phase-one simplex for the linear feasibility question behind the
//! adjustment-factor range: does any probability vector reproduce a given
//! vector of sufficient statistics?

use super::Matrix;

/// Returns true iff there exists `p` with `p >= 0`, `1'p = 1`, `X'p = t`.
///
/// Solved as a phase-one linear program: minimize the sum of artificial
/// variables over `[1'; X'] p + artificials = [1; t]`. Bland's rule keeps the
/// pivoting cycle-free; instances here are tiny, so the dense tableau is fine.
/// `tol` is the feasibility slack on the optimal artificial mass.
pub fn simplex_feasible(design: &Matrix, t: &[f64], tol: f64) -> bool {
    let r = design.rows();
    let k = design.cols();
    if t.len() != k || t.iter().any(|v| !v.is_finite()) {
        return false;
    }
    // m = k+1 equality constraints on r structural variables.
    let m = k + 1;
    let ncols = r + m; // structural + artificial
    let mut a = vec![0.0; m * ncols];
    let mut b = vec![0.0; m];

    // Row 0: 1'p = 1. Rows 1..m: X'p = t.
    for j in 0..r {
        a[j] = 1.0;
    }
    b[0] = 1.0;
    for i in 0..k {
        for j in 0..r {
            a[(i + 1) * ncols + j] = design.get(j, i);
        }
        b[i + 1] = t[i];
    }
    // Flip rows with negative rhs so artificials start feasible.
    for i in 0..m {
        if b[i] < 0.0 {
            b[i] = -b[i];
            for j in 0..r {
                a[i * ncols + j] = -a[i * ncols + j];
            }
        }
    }
    for i in 0..m {
        a[i * ncols + r + i] = 1.0;
    }

    let mut basis: Vec<usize> = (r..r + m).collect();
    // Phase-one reduced costs: cost 1 on artificials, 0 elsewhere. With the
    // artificial basis, the reduced cost of column j is -sum_i a_ij and the
    // objective is -sum(b).
    let mut cost = vec![0.0; ncols];
    let mut obj = 0.0;
    for i in 0..m {
        for j in 0..ncols {
            cost[j] -= a[i * ncols + j];
        }
        obj -= b[i];
    }
    for c in cost.iter_mut().skip(r) {
        *c += 1.0; // artificials carry unit cost
    }

    const PIVOT_EPS: f64 = 1e-11;
    let max_pivots = 50 * (ncols + m);
    for _ in 0..max_pivots {
        // Bland: entering = lowest-index column with negative reduced cost.
        let Some(enter) = (0..ncols).find(|&j| cost[j] < -PIVOT_EPS) else {
            break; // optimal
        };
        // Ratio test; ties broken by smallest basis variable (Bland).
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let aij = a[i * ncols + enter];
            if aij > PIVOT_EPS {
                let ratio = b[i] / aij;
                let better = ratio < best - 1e-15
                    || ((ratio - best).abs() <= 1e-15
                        && leave.is_some_and(|l| basis[i] < basis[l]));
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(li) = leave else {
            // Unbounded phase-one cannot happen (objective bounded below by 0);
            // bail out defensively.
            break;
        };
        // Pivot on (li, enter).
        let piv = a[li * ncols + enter];
        for j in 0..ncols {
            a[li * ncols + j] /= piv;
        }
        b[li] /= piv;
        for i in 0..m {
            if i != li {
                let f = a[i * ncols + enter];
                if f != 0.0 {
                    for j in 0..ncols {
                        a[i * ncols + j] -= f * a[li * ncols + j];
                    }
                    b[i] -= f * b[li];
                }
            }
        }
        let f = cost[enter];
        if f != 0.0 {
            for j in 0..ncols {
                cost[j] -= f * a[li * ncols + j];
            }
            obj -= f * b[li];
        }
        basis[li] = enter;
    }
    // Optimal artificial mass is -obj (phase-one objective value).
    (-obj) <= tol.max(0.0)
}
