//! Cross-module library workflows that no single module's unit tests cover.

use mmfit::curved::fit_curved_newton;
use mmfit::geometry::mle_surface_grid;
use mmfit::loglinear::FitOptions;
use mmfit::model::{canonical_params, validate_design, CanonicalBasis, DesignMatrix};
use mmfit::numerics::{norm_inf, solve_spd, Matrix};

const BASKET: [u64; 7] = [374, 3684, 233, 991, 41, 607, 46];

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

#[test]
fn fitted_basket_has_zero_eta_block_in_the_partitioned_basis() {
    // The canonical coordinates of a fitted vector split into the model
    // block (equal to theta) and the eta block (zero), when the basis is
    // partitioned along the design.
    let design = basket();
    let fit = fit_curved_newton(&design, &BASKET, &FitOptions::default()).unwrap();
    let basis = CanonicalBasis::from_design(&design).unwrap();
    let lambda = canonical_params(&fit.pi, &basis).unwrap();
    for (i, (&l, &th)) in lambda.iter().zip(&fit.theta).enumerate().take(3) {
        assert!((l - th).abs() <= 1e-8, "component {i}: {l} vs {th}");
    }
    for &l in &lambda[3..] {
        assert!(l.abs() <= 1e-8, "eta block entry {l}");
    }
}

/// 3x3 inverse by the adjugate, as an independent linear-algebra oracle.
fn adjugate_inverse_3x3(a: &Matrix) -> Vec<Vec<f64>> {
    assert_eq!((a.rows(), a.cols()), (3, 3));
    let m = |i: usize, j: usize| a.get(i, j);
    let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
        - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
        + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    let cof = |i: usize, j: usize| {
        let (r0, r1) = match i {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let (c0, c1) = match j {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let minor = m(r0, c0) * m(r1, c1) - m(r0, c1) * m(r1, c0);
        if (i + j).is_multiple_of(2) {
            minor
        } else {
            -minor
        }
    };
    (0..3)
        .map(|i| (0..3).map(|j| cof(j, i) / det).collect())
        .collect()
}

#[test]
fn spd_solve_matches_the_adjugate_inverse_on_the_information_matrix() {
    // F at the uniform distribution of the 4-cell design, assembled from
    // its definition right here so the oracle is self-contained.
    let design = four_cell();
    let x = design.matrix();
    let (r, k) = (x.rows(), x.cols());
    let pi = vec![1.0 / r as f64; r];
    let tau = x.tr_matvec(&pi);
    let mut f = Matrix::zeros(k, k);
    for (j, &w) in pi.iter().enumerate().take(r) {
        for a in 0..k {
            for b in 0..k {
                let v = f.get(a, b) + w * x.get(j, a) * x.get(j, b);
                f.set(a, b, v);
            }
        }
    }
    for a in 0..k {
        for b in 0..k {
            f.set(a, b, f.get(a, b) - tau[a] * tau[b]);
        }
    }

    let inv = adjugate_inverse_3x3(&f);
    let b = [0.3, -1.0, 0.25];
    let x_solved = solve_spd(&f, &b).unwrap();
    for i in 0..3 {
        let expect: f64 = (0..3).map(|j| inv[i][j] * b[j]).sum();
        assert!(
            (x_solved[i] - expect).abs() <= 1e-12,
            "component {i}: {} vs {expect}",
            x_solved[i]
        );
    }
}

#[test]
fn grid_statistics_lie_on_a_two_dimensional_sheet() {
    // The image of the proportion grid under p -> X' pi_hat sits on a
    // surface of dimension k-1 = 2: locally, neighbor differences stay
    // close to a plane.
    let design = four_cell();
    let (points, failures) = mle_surface_grid(&design, 0.05).unwrap();
    assert!(failures.is_empty());
    let stats: Vec<&Vec<f64>> = points.iter().map(|pt| &pt.stat).collect();

    let cross = |a: &[f64], b: &[f64]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let len = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>()).sqrt();

    let mut checked = 0;
    for (idx, center) in stats.iter().enumerate().step_by(97) {
        // Six nearest distinct neighbors; grid points on the same statistic
        // ray have identical images and carry no direction, so skip them.
        let mut dists: Vec<(f64, usize)> = stats
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx)
            .map(|(j, s)| {
                let d: f64 = s
                    .iter()
                    .zip(center.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d.sqrt(), j)
            })
            .filter(|(d, _)| *d > 1e-6)
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0));
        let diffs: Vec<Vec<f64>> = dists[..6]
            .iter()
            .map(|&(_, j)| {
                stats[j]
                    .iter()
                    .zip(center.iter())
                    .map(|(a, b)| a - b)
                    .collect()
            })
            .collect();
        // Tangent plane from the best-separated pair of differences; the
        // rest must stay nearly tangent.
        let mut normal = [0.0; 3];
        let mut best_area = 0.0;
        for a in 0..6 {
            for b in a + 1..6 {
                let n = cross(&diffs[a], &diffs[b]);
                let area = len(&n) / (len(&diffs[a]) * len(&diffs[b]));
                if area > best_area {
                    best_area = area;
                    normal = n;
                }
            }
        }
        let n_len = len(&normal);
        assert!(n_len > 1e-12, "all neighbor differences collinear");
        for d in &diffs {
            let d_len = len(d);
            let off_plane: f64 = d
                .iter()
                .zip(&normal)
                .map(|(a, b)| a * b / n_len)
                .sum::<f64>()
                .abs();
            assert!(
                off_plane <= 0.2 * d_len,
                "neighbor leaves the tangent plane by {off_plane} (length {d_len})"
            );
        }
        checked += 1;
    }
    assert!(checked >= 8, "too few centers checked: {checked}");
}

#[test]
fn grid_points_with_proportional_statistics_share_the_mle() {
    // Proportions whose sufficient statistics are positive multiples of one
    // another lead to the same curved MLE; the 0.05 grid contains a few
    // such groups.
    let design = four_cell();
    let (points, _) = mle_surface_grid(&design, 0.05).unwrap();
    let x = design.matrix();
    let mut groups: std::collections::BTreeMap<Vec<i64>, Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, pt) in points.iter().enumerate() {
        let t = x.tr_matvec(&pt.p);
        let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let key: Vec<i64> = t
            .iter()
            .map(|v| (v / scale * 1e9).round() as i64)
            .collect();
        groups.entry(key).or_default().push(i);
    }
    let mut multi = 0;
    for members in groups.values().filter(|m| m.len() > 1) {
        multi += 1;
        let base = &points[members[0]].pi_hat;
        for &j in &members[1..] {
            let gap = norm_inf(
                &base
                    .iter()
                    .zip(&points[j].pi_hat)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>(),
            );
            assert!(gap <= 1e-8, "group member differs by {gap}");
        }
    }
    assert!(multi >= 3, "expected several proportional groups, found {multi}");
}

#[test]
fn ray_rescaling_of_the_constraint_rows_keeps_the_cone() {
    // The cone depends on the rows only through their directions.
    use mmfit::geometry::cone_edges_of;
    let x = four_cell();
    let base = cone_edges_of(x.matrix()).unwrap();
    let scales = [3.0, 0.5, 7.0, 1.25];
    let scaled_rows: Vec<Vec<f64>> = (0..4)
        .map(|i| x.matrix().row(i).iter().map(|v| v * scales[i]).collect())
        .collect();
    let scaled = cone_edges_of(&Matrix::from_rows(&scaled_rows).unwrap()).unwrap();
    assert_eq!(base.count(), scaled.count());
    for j in 0..base.count() {
        let want = base.ray(j);
        let found = (0..scaled.count()).any(|i| {
            let got = scaled.ray(i);
            norm_inf(
                &got.iter()
                    .zip(&want)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>(),
            ) <= 1e-9
        });
        assert!(found, "ray {want:?} lost after row rescaling");
    }
}
