use rand::seq::SliceRandom;
use rand::Rng;
use slmm_core::baselines::{
    correlation, kmeans, kmeans_init, match_factors, nmf_from, nmf_multiplicative, nmf_step,
    normalize_nmf, order_roles, permute_factors, NmfResult,
};
use slmm_core::rng::seeded;
use slmm_core::{ImageGeometry, Mat};

fn inertia(y: &Mat, labels: &[usize], k: usize) -> f64 {
    let (l, n) = y.shape();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
        if members.is_empty() {
            continue;
        }
        for i in 0..l {
            let mean = members.iter().map(|&j| y[(i, j)]).sum::<f64>() / members.len() as f64;
            total += members.iter().map(|&j| (y[(i, j)] - mean).powi(2)).sum::<f64>();
        }
    }
    total
}

#[test]
fn kmeans_with_one_point_per_cluster_is_exact() {
    let y = Mat::from_rows(&[&[0.0, 1.0, 5.0, 9.0], &[2.0, 0.0, 3.0, 1.0]]).unwrap();
    let r = kmeans_init(&y, 4, 3).unwrap();
    assert_eq!(r.inertia, 0.0);
    let mut seen = r.labels.clone();
    seen.sort_unstable();
    assert_eq!(seen, vec![0, 1, 2, 3]);
    for (j, &c) in r.labels.iter().enumerate() {
        assert_eq!(r.centroids.col(c), y.col(j));
    }
    assert!(kmeans_init(&y, 5, 3).is_err());
    assert!(kmeans_init(&y, 0, 3).is_err());
}

#[test]
fn two_blobs_match_exhaustive_partition() {
    let mut rng = seeded(41, 0);
    for trial in 0..10 {
        let n = 10;
        let y = Mat::from_fn(3, n, |_, j| {
            let centre = if j < 4 { 0.0 } else { 5.0 };
            centre + rng.random_range(-1.0..1.0)
        });
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|j| ((mask >> j) & 1) as usize).collect();
            best = best.min(inertia(&y, &labels, 2));
        }
        let r = kmeans_init(&y, 2, trial).unwrap();
        assert!((r.inertia - best).abs() <= 1e-9 * best, "{} vs {best}", r.inertia);
    }
}

#[test]
fn duplicating_points_keeps_centroids() {
    let mut rng = seeded(42, 0);
    let y = Mat::from_fn(4, 30, |_, j| (j % 3) as f64 * 4.0 + rng.random_range(-0.5..0.5));
    let dup = Mat::from_fn(4, 60, |i, j| y[(i, j % 30)]);
    let a = kmeans_init(&y, 3, 5).unwrap();
    let b = kmeans_init(&dup, 3, 5).unwrap();
    let perm = match_factors(&b.centroids, &a.centroids).unwrap();
    let b_sorted = b.centroids.select_cols(&perm);
    assert!(a.centroids.sub(&b_sorted).max_abs() < 1e-12);
    assert!((b.inertia - 2.0 * a.inertia).abs() < 1e-9 * a.inertia);
}

#[test]
fn kmeans_inertia_never_increases_and_is_deterministic() {
    let mut rng = seeded(43, 0);
    for seed in 0..20 {
        let y = Mat::from_fn(5, 200, |_, _| rng.random_range(0.0..1.0));
        let r = kmeans(&y, 4, seed, 100).unwrap();
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0]);
        }
        assert!((inertia(&y, &r.labels, 4) - r.inertia).abs() <= 1e-9 * r.inertia);
        assert_eq!(kmeans(&y, 4, seed, 100).unwrap(), r);
    }
}

fn random_nmf_instance(seed: u64) -> (Mat, Mat, Mat) {
    let mut rng = seeded(seed, 0);
    let (l, k, n) = (8, 3, 40);
    let y = Mat::from_fn(l, n, |_, _| rng.random_range(0.0..2.0));
    let w = Mat::from_fn(l, k, |_, _| rng.random_range(0.01..1.0));
    let h = Mat::from_fn(k, n, |_, _| rng.random_range(0.01..1.0));
    (y, w, h)
}

#[test]
fn multiplicative_updates_never_increase_the_cost() {
    for seed in 0..50 {
        let (y, mut w, mut h) = random_nmf_instance(seed);
        let mut prev = 0.5 * y.sub(&w.matmul(&h)).frobenius_sq();
        for _ in 0..100 {
            nmf_step(&y, &mut w, &mut h);
            let c = 0.5 * y.sub(&w.matmul(&h)).frobenius_sq();
            assert!(c <= prev + 1e-10, "seed {seed}: {c} > {prev}");
            prev = c;
        }
    }
}

#[test]
fn nmf_step_matches_scalar_loops() {
    let (y, w0, h0) = random_nmf_instance(7);
    let (mut w, mut h) = (w0.clone(), h0.clone());
    nmf_step(&y, &mut w, &mut h);
    let (l, n) = y.shape();
    let k = w0.cols();
    let mut h1 = h0.clone();
    for a in 0..k {
        for j in 0..n {
            let num: f64 = (0..l).map(|i| w0[(i, a)] * y[(i, j)]).sum();
            let mut den = 0.0;
            for b in 0..k {
                let g: f64 = (0..l).map(|i| w0[(i, a)] * w0[(i, b)]).sum();
                den += g * h0[(b, j)];
            }
            h1[(a, j)] = h0[(a, j)] * num / den;
        }
    }
    let mut w1 = w0.clone();
    for i in 0..l {
        for a in 0..k {
            let num: f64 = (0..n).map(|j| y[(i, j)] * h1[(a, j)]).sum();
            let mut den = 0.0;
            for b in 0..k {
                let g: f64 = (0..n).map(|j| h1[(b, j)] * h1[(a, j)]).sum();
                den += w0[(i, b)] * g;
            }
            w1[(i, a)] = w0[(i, a)] * num / den;
        }
    }
    assert!(h.sub(&h1).max_abs() < 1e-12);
    assert!(w.sub(&w1).max_abs() < 1e-12);
}

#[test]
fn exact_factorization_is_a_fixed_point() {
    let (_, w, h) = random_nmf_instance(8);
    let y = w.matmul(&h);
    let r = nmf_from(&y, w.clone(), h.clone(), 1e-6, 10).unwrap();
    assert!(r.w.sub(&w).max_abs() < 1e-10);
    assert!(r.h.sub(&h).max_abs() < 1e-10);
    assert!(r.cost_history[0] < 1e-20);
}

#[test]
fn zero_rows_stay_zero() {
    let (y, w, mut h) = random_nmf_instance(9);
    h.row_mut(1).iter_mut().for_each(|v| *v = 0.0);
    let r = nmf_from(&y, w, h, 1e-9, 50).unwrap();
    assert!(r.h.row(1).iter().all(|&v| v == 0.0));
    let mut res = r;
    let skipped = normalize_nmf(&mut res);
    assert_eq!(skipped, vec![1]);
}

#[test]
fn nmf_rejects_bad_inputs_and_clamps_negatives() {
    let (y, w, h) = random_nmf_instance(10);
    assert!(nmf_from(&y, w.scaled(-1.0), h.clone(), 1e-3, 5).is_err());
    assert!(nmf_from(&y, w.clone(), h.clone(), 0.0, 5).is_err());
    assert!(nmf_from(&Mat::filled(8, 40, -1.0), w.clone(), h.clone(), 1e-3, 5).is_err());
    let mut neg = y.clone();
    neg[(0, 0)] = -3.0;
    let mut clamped = y.clone();
    clamped[(0, 0)] = 0.0;
    let a = nmf_from(&neg, w.clone(), h.clone(), 1e-3, 5).unwrap();
    let b = nmf_from(&clamped, w, h, 1e-3, 5).unwrap();
    assert_eq!(a, b);
    let r = nmf_multiplicative(&y, 3, 1, 1e-4, 200).unwrap();
    assert!(r.w.min() >= 0.0 && r.h.min() >= 0.0);
    assert_eq!(r, nmf_multiplicative(&y, 3, 1, 1e-4, 200).unwrap());
}

#[test]
fn normalization_examples_and_product_invariance() {
    let mut res = NmfResult {
        w: Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap(),
        h: Mat::from_rows(&[&[0.5, 2.0, 1.0], &[0.25, 0.1, 0.0]]).unwrap(),
        cost_history: vec![],
        iterations: 0,
    };
    let before = res.w.matmul(&res.h);
    assert!(normalize_nmf(&mut res).is_empty());
    assert_eq!(res.h.row(0), &[0.25, 1.0, 0.5]);
    assert_eq!(res.w.col(0), vec![2.0, 6.0]);
    assert_eq!(res.w.col(1), vec![0.5, 1.0]);
    assert!(res.w.matmul(&res.h).sub(&before).max_abs() <= 1e-12);

    for seed in 0..20 {
        let (y, w, h) = random_nmf_instance(100 + seed);
        let mut r = nmf_from(&y, w, h, 1e-4, 30).unwrap();
        let before = r.w.matmul(&r.h);
        normalize_nmf(&mut r);
        assert!(r.w.matmul(&r.h).sub(&before).max_abs() <= 1e-12 * before.max_abs().max(1.0));
        for c in 0..r.h.rows() {
            let top = r.h.row(c).iter().cloned().fold(0.0, f64::max);
            assert!((top - 1.0).abs() < 1e-15);
        }
    }
}

#[test]
fn factor_matching() {
    let mut rng = seeded(44, 0);
    let reference = Mat::from_fn(12, 4, |i, j| ((i + 1) as f64 * (j as f64 + 0.7)).sin() + j as f64);
    assert_eq!(match_factors(&reference, &reference).unwrap(), vec![0, 1, 2, 3]);
    let swapped = reference.select_cols(&[1, 0, 2, 3]);
    assert_eq!(match_factors(&swapped, &reference).unwrap(), vec![1, 0, 2, 3]);
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..4).collect();
        perm.shuffle(&mut rng);
        let shuffled = reference.select_cols(&perm);
        let noisy = shuffled.map(|v| v + 0.05 * rng.random_range(-1.0..1.0));
        let p = match_factors(&noisy, &reference).unwrap();
        // reference column i sits at estimated column p[i]
        for i in 0..4 {
            assert_eq!(perm[p[i]], i);
        }
    }
    assert!(match_factors(&Mat::zeros(3, 9), &Mat::zeros(3, 9)).is_err());
    assert!(match_factors(&Mat::zeros(3, 2), &Mat::zeros(3, 3)).is_err());
}

#[test]
fn correlation_and_role_ordering() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((correlation(&x, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-15);
    assert!((correlation(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    assert_eq!(correlation(&x, &[1.0; 4]), 0.0);

    let frames = ImageGeometry::linear_frames(4, 1.0, 2.0);
    let rising = [1.0, 2.0, 3.0, 4.0];
    let cents = Mat::from_rows(&[
        &[5.0, 1.0, 0.5, 9.0],
        &[4.0, 2.0, 0.1, 3.0],
        &[3.0, 3.0, 0.3, 2.0],
        &[2.0, 4.0, 0.2, 1.0],
    ])
    .unwrap();
    let order = order_roles(&cents, &rising, None, &frames).unwrap();
    assert_eq!(order[0], 1);
    assert_eq!(order[1..], [0, 3, 2]);
    let refs = cents.select_cols(&[2, 0, 3]);
    let order = order_roles(&cents, &rising, Some(&refs), &frames).unwrap();
    assert_eq!(order, vec![1, 2, 0, 3]);

    let a = Mat::from_rows(&[&[0.1, 0.2], &[0.9, 0.8]]).unwrap();
    let (m2, a2) = permute_factors(&cents.select_cols(&[0, 1]), &a, &[1, 0]);
    assert_eq!(m2.col(0), cents.col(1));
    assert_eq!(a2.row(0), a.row(1));
}
