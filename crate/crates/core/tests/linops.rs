mod common;

use proptest::prelude::*;
use rand::Rng;
use slmm_core::linops::{
    project_simplex_columns, prox_l1_nonneg, LinearOperator, PsfOperator, SpatialDiffOperator,
};
use slmm_core::rng::seeded;
use slmm_core::Mat;

/// Tries every support size and keeps the feasible candidate closest to `v`.
fn simplex_oracle(v: &[f64]) -> Vec<f64> {
    let k = v.len();
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for rho in 1..=k {
        let tau = (sorted[..rho].iter().sum::<f64>() - 1.0) / rho as f64;
        let x: Vec<f64> = v.iter().map(|&u| (u - tau).max(0.0)).collect();
        let s: f64 = x.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            continue;
        }
        let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    best.unwrap().1
}

#[test]
fn simplex_projection_matches_exhaustive_oracle() {
    let mut rng = seeded(11, 0);
    for trial in 0..1000 {
        let k = 1 + trial % 6;
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = project_simplex_columns(&Mat::column(&v)).col(0);
        let o = simplex_oracle(&v);
        for (a, b) in p.iter().zip(&o) {
            assert!((a - b).abs() <= 1e-10, "{v:?}: {p:?} vs {o:?}");
        }
    }
}

#[test]
fn prox_matches_scalar_argmin() {
    let mut rng = seeded(12, 0);
    for _ in 0..500 {
        let x: f64 = rng.random_range(-1.0..1.0);
        let t: f64 = rng.random_range(0.0..0.5);
        // argmin over a fine grid of 1/2 (z - x)^2 + t z, z >= 0
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=200_000 {
            let z = i as f64 * 1e-5;
            let f = 0.5 * (z - x) * (z - x) + t * z;
            if f < best.0 {
                best = (f, z);
            }
        }
        let p = prox_l1_nonneg(&Mat::filled(1, 1, x), t)[(0, 0)];
        assert!((p - best.1).abs() <= 1e-5, "x={x} t={t}: {p} vs {}", best.1);
    }
}

fn adjoint_gap(op: &impl LinearOperator, rng: &mut impl Rng) -> f64 {
    let n = op.input_len();
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hx = op.apply_vec(&x);
    let y: Vec<f64> = (0..hx.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hty = op.adjoint_vec(&y);
    let lhs: f64 = hx.iter().zip(&y).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(&hty).map(|(a, b)| a * b).sum();
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)
}

#[test]
fn operators_are_adjoint_on_random_pairs() {
    let g = common::geometry([9, 7, 5], 3);
    let psf = PsfOperator::gaussian(&g, 4.4).unwrap();
    let sdiff = SpatialDiffOperator::new(&g);
    let mut rng = seeded(13, 0);
    for _ in 0..100 {
        assert!(adjoint_gap(&psf, &mut rng) <= 1e-10);
        assert!(adjoint_gap(&sdiff, &mut rng) <= 1e-10);
    }
}

#[test]
fn matrix_level_adjoints() {
    let g = common::geometry([6, 5, 4], 3);
    let psf = PsfOperator::gaussian(&g, 3.0).unwrap();
    let sdiff = SpatialDiffOperator::new(&g);
    let mut rng = seeded(14, 0);
    let n = g.n_voxels();
    let x = Mat::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
    let y = Mat::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
    let lhs = psf.apply(&x).unwrap().dot(&y);
    let rhs = x.dot(&psf.adjoint(&y).unwrap());
    assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    let sx = sdiff.apply(&x).unwrap();
    let z = Mat::from_fn(sx.rows(), sx.cols(), |_, _| rng.random_range(-1.0..1.0));
    let lhs = sx.dot(&z);
    let rhs = x.dot(&sdiff.adjoint(&z).unwrap());
    assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
}

proptest! {
    #[test]
    fn simplex_projection_is_feasible_and_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..9)) {
        let p = project_simplex_columns(&Mat::column(&v));
        let s: f64 = p.col(0).iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(p.min() >= 0.0);
        let q = project_simplex_columns(&p);
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn simplex_projection_commutes_with_shift(v in prop::collection::vec(-3.0f64..3.0, 2..7), c in -2.0f64..2.0) {
        let p = project_simplex_columns(&Mat::column(&v));
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let q = project_simplex_columns(&Mat::column(&shifted));
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn prox_is_nonexpansive_and_nonnegative(x in -3.0f64..3.0, y in -3.0f64..3.0, t in 0.0f64..1.0) {
        let px = prox_l1_nonneg(&Mat::filled(1, 1, x), t)[(0, 0)];
        let py = prox_l1_nonneg(&Mat::filled(1, 1, y), t)[(0, 0)];
        prop_assert!(px >= 0.0 && py >= 0.0);
        prop_assert!((px - py).abs() <= (x - y).abs() + 1e-15);
    }

    #[test]
    fn psf_preserves_nonnegativity(seed in 0u64..1000) {
        let g = common::geometry([5, 4, 3], 2);
        let psf = PsfOperator::gaussian(&g, 4.4).unwrap();
        let mut rng = seeded(seed, 0);
        let x = Mat::from_fn(2, g.n_voxels(), |_, _| rng.random_range(0.0..1.0));
        let hx = psf.apply(&x).unwrap();
        prop_assert!(hx.min() >= 0.0);
        prop_assert!(hx.sum() <= x.sum() + 1e-9);
    }
}
