//! Geometry of the constraint surface: extreme rays of the cone
//! `{theta : X theta <= 0}`, random sampling of the surface
//! `log(1' exp(X theta)) = 0` inside it, and the grid of curved MLEs over
//! the simplex of sample proportions.

use crate::curved::{fit_curved_newton_props, CurvedError};
use crate::loglinear::FitOptions;
use crate::model::DesignMatrix;
use crate::numerics::{log_sum_exp, norm_inf, Matrix, NumericsError, RngStream};
use crate::tol;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("cone enumeration supports at most {max} columns, design has {cols}")]
    TooManyColumns { cols: usize, max: usize },
    #[error("the cone has an empty interior: no theta satisfies X theta < 0 strictly")]
    DegenerateCone,
    #[error("direction is not strictly interior: (X u)_{index} >= 0")]
    NotInterior { index: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("grid of {points} points exceeds the {max}-point guard; use a coarser step")]
    GridTooLarge { points: u128, max: u128 },
    #[error(transparent)]
    Curved(#[from] CurvedError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl crate::ClassifiedError for GeometryError {
    fn class(&self) -> crate::ErrorClass {
        use crate::ErrorClass;
        match self {
            Self::TooManyColumns { .. } | Self::GridTooLarge { .. } => ErrorClass::SizeGuard,
            Self::DegenerateCone | Self::NotInterior { .. } | Self::Domain(_) => {
                ErrorClass::Validation
            }
            Self::Curved(e) => e.class(),
            Self::Numerics(e) => e.class(),
        }
    }
}

/// Extreme rays (edges) of the polyhedral cone, stored as the columns of a
/// `k x g` matrix, each normalized to unit infinity norm.
#[derive(Debug, Clone)]
pub struct ConeEdges {
    rays: Matrix,
}

impl ConeEdges {
    /// The `k x g` matrix whose columns are the rays.
    pub fn matrix(&self) -> &Matrix {
        &self.rays
    }

    pub fn count(&self) -> usize {
        self.rays.cols()
    }

    pub fn ray(&self, j: usize) -> Vec<f64> {
        self.rays.col(j)
    }
}

/// Enumerates the extreme rays of `{theta : X theta <= 0}` by the
/// incremental double-description method.
pub fn cone_edges(design: &DesignMatrix) -> Result<ConeEdges, GeometryError> {
    cone_edges_of(design.matrix())
}

/// Low-level variant taking the constraint rows directly; the cone must be
/// pointed (rows of full column rank).
pub fn cone_edges_of(x: &Matrix) -> Result<ConeEdges, GeometryError> {
    let k = x.cols();
    let r = x.rows();
    if k > tol::MAX_CONE_DIM {
        return Err(GeometryError::TooManyColumns {
            cols: k,
            max: tol::MAX_CONE_DIM,
        });
    }
    const ACTIVE_TOL: f64 = 1e-9;

    // Seed with a simplicial subcone from k linearly independent rows; its
    // rays are the columns of -A^{-1}.
    let seed_rows = independent_rows(x, k).ok_or(GeometryError::DegenerateCone)?;
    let mut a = Matrix::zeros(k, k);
    for (i, &ri) in seed_rows.iter().enumerate() {
        for j in 0..k {
            a.set(i, j, x.get(ri, j));
        }
    }
    let mut rays: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut e = vec![0.0; k];
        e[j] = -1.0;
        let u = solve_dense(&a, &e).ok_or(GeometryError::DegenerateCone)?;
        rays.push(normalize_ray(&u));
    }

    let mut processed: Vec<usize> = seed_rows.clone();
    let active_set = |u: &[f64], rows: &[usize]| -> Vec<usize> {
        rows.iter()
            .copied()
            .filter(|&i| {
                x.row(i)
                    .iter()
                    .zip(u)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .abs()
                    <= ACTIVE_TOL
            })
            .collect()
    };

    for row in 0..r {
        if seed_rows.contains(&row) {
            continue;
        }
        let sigma: Vec<f64> = rays
            .iter()
            .map(|u| x.row(row).iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let has_violation = sigma.iter().any(|&s| s > ACTIVE_TOL);
        if has_violation {
            let mut next: Vec<Vec<f64>> = Vec::new();
            for (u, &s) in rays.iter().zip(&sigma) {
                if s <= ACTIVE_TOL {
                    next.push(u.clone());
                }
            }
            // Combine each violating/satisfying adjacent pair into a new ray
            // on the hyperplane of the constraint being inserted.
            let actives: Vec<Vec<usize>> =
                rays.iter().map(|u| active_set(u, &processed)).collect();
            for (ip, &sp) in sigma.iter().enumerate() {
                if sp <= ACTIVE_TOL {
                    continue;
                }
                for (im, &sm) in sigma.iter().enumerate() {
                    if sm >= -ACTIVE_TOL {
                        continue;
                    }
                    if !adjacent(&actives, ip, im) {
                        continue;
                    }
                    let w: Vec<f64> = rays[ip]
                        .iter()
                        .zip(&rays[im])
                        .map(|(up, um)| sp * um - sm * up)
                        .collect();
                    let w = normalize_ray(&w);
                    if !next
                        .iter()
                        .any(|v| ray_equal(v, &w, tol::RAY_DEDUP_TOL))
                    {
                        next.push(w);
                    }
                }
            }
            rays = next;
        }
        processed.push(row);
        if rays.is_empty() {
            return Err(GeometryError::DegenerateCone);
        }
    }

    // Full-dimensionality: a constraint active at every ray flattens the cone.
    let mut total = vec![0.0; k];
    for u in &rays {
        for (t, v) in total.iter_mut().zip(u) {
            *t += v;
        }
    }
    for i in 0..r {
        let v: f64 = x.row(i).iter().zip(&total).map(|(a, b)| a * b).sum();
        if v.abs() <= ACTIVE_TOL {
            return Err(GeometryError::DegenerateCone);
        }
    }

    rays.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .find_map(|(x, y)| {
                let c = x.total_cmp(y);
                (c != std::cmp::Ordering::Equal).then_some(c)
            })
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let g = rays.len();
    let mut m = Matrix::zeros(k, g);
    for (j, u) in rays.iter().enumerate() {
        for i in 0..k {
            m.set(i, j, u[i]);
        }
    }
    Ok(ConeEdges { rays: m })
}

/// Combinatorial adjacency: rays `ip` and `im` are adjacent unless some
/// third ray is active on every constraint they share.
fn adjacent(actives: &[Vec<usize>], ip: usize, im: usize) -> bool {
    let shared: Vec<usize> = actives[ip]
        .iter()
        .copied()
        .filter(|i| actives[im].contains(i))
        .collect();
    for (iw, act) in actives.iter().enumerate() {
        if iw == ip || iw == im {
            continue;
        }
        if shared.iter().all(|i| act.contains(i)) {
            return false;
        }
    }
    true
}

fn normalize_ray(u: &[f64]) -> Vec<f64> {
    let m = norm_inf(u);
    u.iter().map(|v| v / m).collect()
}

fn ray_equal(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Greedy selection of `want` linearly independent rows by Gaussian
/// elimination with partial pivoting.
fn independent_rows(x: &Matrix, want: usize) -> Option<Vec<usize>> {
    let r = x.rows();
    let k = x.cols();
    let mut work: Vec<Vec<f64>> = (0..r).map(|i| x.row(i).to_vec()).collect();
    let mut chosen = Vec::with_capacity(want);
    let mut used = vec![false; r];
    for col in 0..k.min(want) {
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in work.iter().enumerate() {
            if used[i] {
                continue;
            }
            let v = row[col].abs();
            if v > 1e-12 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((i, v));
            }
        }
        let (pivot, _) = best?;
        used[pivot] = true;
        chosen.push(pivot);
        let pivot_row = work[pivot].clone();
        for (i, row) in work.iter_mut().enumerate() {
            if used[i] {
                continue;
            }
            let f = row[col] / pivot_row[col];
            if f != 0.0 {
                for (a, b) in row.iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
            }
        }
    }
    (chosen.len() == want).then_some(chosen)
}

/// General dense solve with partial pivoting for the tiny seed system.
fn solve_dense(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        for i in 0..n {
            if i != col {
                let f = m[i][col] / m[col][col];
                if f != 0.0 {
                    let src = m[col].clone();
                    for (a, s) in m[i].iter_mut().zip(&src) {
                        *a -= f * s;
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Finds the unique `c > 0` scaling a strictly interior cone direction onto
/// the constraint surface: `log(1' exp(c X u)) = 0`.
///
/// The map is strictly decreasing in `c`, from `log r` at zero to minus
/// infinity, so a safeguarded Newton iteration inside a doubling bracket
/// cannot miss.
pub fn scale_to_surface(design: &DesignMatrix, u: &[f64]) -> Result<f64, GeometryError> {
    scale_to_surface_of(design.matrix(), u)
}

pub(crate) fn scale_to_surface_of(x: &Matrix, u: &[f64]) -> Result<f64, GeometryError> {
    if u.len() != x.cols() {
        return Err(GeometryError::Domain(format!(
            "direction has length {}, design has {} columns",
            u.len(),
            x.cols()
        )));
    }
    let v = x.matvec(u);
    if let Some(index) = v.iter().position(|&vi| vi >= 0.0) {
        return Err(GeometryError::NotInterior { index });
    }
    let phi = |c: f64| -> (f64, f64) {
        let scaled: Vec<f64> = v.iter().map(|vi| c * vi).collect();
        let (value, weights) = log_sum_exp(&scaled);
        let slope: f64 = weights.iter().zip(&v).map(|(w, vi)| w * vi).sum();
        (value, slope)
    };

    let mut lo = 0.0; // phi(0) = log(r) > 0
    let mut hi = 1.0;
    while phi(hi).0 > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(GeometryError::Domain(
                "scaling diverged; direction is numerically on the cone boundary".into(),
            ));
        }
    }
    let mut c = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (value, slope) = phi(c);
        if value.abs() <= tol::SURFACE_TOL {
            return Ok(c);
        }
        if value > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let newton = c - value / slope;
        c = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(GeometryError::Domain(
        "surface scaling did not reach tolerance".into(),
    ))
}

/// Random points on the constraint surface and their mean parameters.
#[derive(Debug, Clone)]
pub struct SurfaceSample {
    pub thetas: Vec<Vec<f64>>,
    pub taus: Vec<Vec<f64>>,
}

/// Draws `count` surface points: mix the edges with uniform weights scaled
/// to sum to one, then scale the resulting interior direction onto the
/// surface. Returns each `theta` and its mean parameter `X' exp(X theta)`.
pub fn sample_surface(
    design: &DesignMatrix,
    edges: &ConeEdges,
    count: usize,
    rng: &mut RngStream,
) -> Result<SurfaceSample, GeometryError> {
    if count == 0 {
        return Err(GeometryError::Domain("sample count must be positive".into()));
    }
    let x = design.matrix();
    let k = design.cols();
    let g = edges.count();
    let mut thetas = Vec::with_capacity(count);
    let mut taus = Vec::with_capacity(count);
    for _ in 0..count {
        let mut q: Vec<f64> = (0..g).map(|_| rng.uniform()).collect();
        let total: f64 = q.iter().sum();
        for w in &mut q {
            *w /= total;
        }
        let mut u = vec![0.0; k];
        for (j, &w) in q.iter().enumerate() {
            for (ui, rij) in u.iter_mut().zip(edges.rays.col(j)) {
                *ui += w * rij;
            }
        }
        let c = scale_to_surface_of(x, &u)?;
        let theta: Vec<f64> = u.iter().map(|v| c * v).collect();
        let pi: Vec<f64> = x.matvec(&theta).iter().map(|v| v.exp()).collect();
        taus.push(x.tr_matvec(&pi));
        thetas.push(theta);
    }
    Ok(SurfaceSample { thetas, taus })
}

/// One fitted grid point: proportions, curved MLE, and its mean statistic.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub p: Vec<f64>,
    pub pi_hat: Vec<f64>,
    pub stat: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GridFailure {
    pub p: Vec<f64>,
    pub message: String,
}

const MAX_GRID_POINTS: u128 = 200_000;

/// Fits the curved model at every interior grid point of the simplex with
/// the given step, returning `(p, pi_hat, X' pi_hat)` per point. Per-point
/// failures are collected, not fatal.
///
/// Points are fitted on all available threads; results are assembled in
/// enumeration order, so the output is independent of the thread count.
pub fn mle_surface_grid(
    design: &DesignMatrix,
    step: f64,
) -> Result<(Vec<GridPoint>, Vec<GridFailure>), GeometryError> {
    if !(step > 0.0 && step < 0.5) {
        return Err(GeometryError::Domain(format!(
            "grid step must be inside (0, 0.5), got {step}"
        )));
    }
    let r = design.rows();
    let m = (1.0 / step).round() as u64;
    if m < r as u64 {
        return Err(GeometryError::Domain(format!(
            "step {step} leaves no interior grid point for {r} cells"
        )));
    }
    let total = compositions_count(m - 1, r as u64 - 1);
    if total > MAX_GRID_POINTS {
        return Err(GeometryError::GridTooLarge {
            points: total,
            max: MAX_GRID_POINTS,
        });
    }

    let mut grid: Vec<Vec<f64>> = Vec::with_capacity(total as usize);
    let mut parts = vec![1u64; r];
    enumerate_compositions(m, r, &mut parts, 0, &mut |parts: &[u64]| {
        grid.push(parts.iter().map(|&v| v as f64 / m as f64).collect());
    });

    let opts = FitOptions::default();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut outcomes: Vec<Option<Result<GridPoint, GridFailure>>> = vec![None; grid.len()];
    let chunk = grid.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        for (slot, ps) in outcomes.chunks_mut(chunk).zip(grid.chunks(chunk)) {
            let opts = &opts;
            scope.spawn(move || {
                for (out, p) in slot.iter_mut().zip(ps) {
                    *out = Some(match fit_curved_newton_props(design, p, 1.0, opts) {
                        Ok(fit) => {
                            let stat = design.matrix().tr_matvec(&fit.pi);
                            Ok(GridPoint {
                                p: p.clone(),
                                pi_hat: fit.pi,
                                stat,
                            })
                        }
                        Err(e) => Err(GridFailure {
                            p: p.clone(),
                            message: e.to_string(),
                        }),
                    });
                }
            });
        }
    });

    let mut points = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Ok(pt) => points.push(pt),
            Err(f) => failures.push(f),
        }
    }
    Ok((points, failures))
}

/// Number of positive compositions of `m` into `r` parts: C(m-1, r-1).
fn compositions_count(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Recursively enumerates positive integer vectors summing to `m`, in
/// lexicographic order for deterministic output.
fn enumerate_compositions(
    m: u64,
    r: usize,
    parts: &mut Vec<u64>,
    index: usize,
    visit: &mut impl FnMut(&[u64]),
) {
    let used: u64 = parts[..index].iter().sum();
    let remaining_slots = (r - index - 1) as u64;
    if index == r - 1 {
        parts[index] = m - used;
        visit(parts);
        return;
    }
    for v in 1..=(m - used - remaining_slots) {
        parts[index] = v;
        enumerate_compositions(m, r, parts, index + 1, visit);
    }
}
