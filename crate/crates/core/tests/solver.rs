mod common;

use common::{geometry, random_instance};
use slmm_core::linops::{PsfOperator, SpatialDiffOperator};
use slmm_core::rng::seeded;
use slmm_core::solver::{
    lipschitz_estimates, palm_iterate, solve, solve_from, Mode, Problem, SolverOptions,
    SolverState, LIPSCHITZ_FLOOR,
};
use slmm_core::{DynamicImage, Hyperparameters, Mat};

fn opts(mode: Mode, max_iters: usize) -> SolverOptions {
    SolverOptions {
        mode,
        hp: Hyperparameters {
            epsilon: 1e-14,
            max_iters,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn assert_feasible(s: &SolverState) {
    assert!(s.m.min() >= 0.0);
    assert!(s.b.min() >= 0.0);
    assert!(s.a.min() >= -1e-12);
    for c in s.a.col_sums() {
        assert!((c - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn cost_is_monotone_and_iterates_feasible() {
    let inst = random_instance(21, [4, 4, 4], 8, 4, 2);
    let o = opts(Mode::Slmm, 50);
    let mut s = inst.state.clone();
    for _ in 0..50 {
        s = palm_iterate(&inst.problem, s, &o).unwrap();
        assert_feasible(&s);
    }
    for w in s.cost_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
    }
    assert_eq!(s.cost_history.len(), 51);
}

#[test]
fn exact_fit_is_a_fixed_point() {
    let g = geometry([3, 3, 2], 6);
    let n = g.n_voxels();
    let mut rng = seeded(3, 0);
    use rand::Rng;
    let m = Mat::from_fn(6, 3, |_, _| rng.random_range(0.1..1.0));
    let a = Mat::from_fn(3, n, |i, _| [0.2, 0.5, 0.3][i]);
    let psf = PsfOperator::gaussian(&g, 4.4).unwrap();
    let y = psf.apply(&m.matmul(&a)).unwrap();
    let v = Mat::from_fn(6, 1, |i, _| i as f64 - 2.0);
    let p = Problem::new(
        &DynamicImage::new(g.clone(), y).unwrap(),
        m.clone(),
        v,
        psf,
        SpatialDiffOperator::new(&g),
    )
    .unwrap();
    let s0 = SolverState::new(m.clone(), a.clone(), Mat::zeros(1, n));
    let s1 = palm_iterate(&p, s0, &opts(Mode::Slmm, 1)).unwrap();
    assert!(s1.m.sub(&m).max_abs() <= 1e-12);
    assert!(s1.a.sub(&a).max_abs() <= 1e-12);
    assert_eq!(s1.b.max_abs(), 0.0);
}

#[test]
fn lmm_mode_keeps_b_at_zero() {
    let inst = random_instance(5, [4, 3, 2], 6, 3, 1);
    let init = SolverState::initial(&inst.problem);
    let r = solve_from(&inst.problem, init, &opts(Mode::Lmm, 30), |_| {}).unwrap();
    assert_eq!(r.b.max_abs(), 0.0);
    assert_eq!(r.iterations, 30);
}

#[test]
fn lmm_equals_slmm_with_zero_basis() {
    let inst = random_instance(8, [4, 3, 2], 6, 3, 1);
    let p = &inst.problem;
    let g = &inst.geometry;
    let zero_basis = Problem::new(
        &DynamicImage::new(g.clone(), p.y().clone()).unwrap(),
        p.m0().clone(),
        Mat::zeros(6, 1),
        p.psf().clone(),
        p.sdiff().clone(),
    )
    .unwrap();
    let mut lmm = opts(Mode::Lmm, 25);
    lmm.hp.lambda = 3.7;
    let a = solve(p, &lmm).unwrap();
    let b = solve(&zero_basis, &opts(Mode::Slmm, 25)).unwrap();
    assert_eq!(a.m, b.m);
    assert_eq!(a.a, b.a);
    assert_eq!(a.b, b.b);
    assert_eq!(a.cost_history, b.cost_history);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let inst = random_instance(13, [4, 4, 2], 6, 3, 1);
    let o = opts(Mode::Slmm, 20);
    let r1 = solve(&inst.problem, &o).unwrap();
    let r2 = solve(&inst.problem, &o).unwrap();
    let bits = |h: &[f64]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&r1.cost_history), bits(&r2.cost_history));
}

#[test]
fn stops_on_relative_decrease() {
    let inst = random_instance(2, [3, 3, 2], 6, 3, 1);
    let mut o = opts(Mode::Slmm, 10_000);
    o.hp.epsilon = 1e-3;
    let r = solve(&inst.problem, &o).unwrap();
    assert!(r.converged);
    let h = &r.cost_history;
    let (p, c) = (h[h.len() - 2], h[h.len() - 1]);
    assert!((p - c).abs() / p < 1e-3);
    assert!(r.iterations < 10_000);
}

#[test]
fn rejects_bad_inputs() {
    let inst = random_instance(1, [3, 3, 2], 6, 3, 1);
    let mut o = opts(Mode::Slmm, 5);
    o.hp.epsilon = 0.0;
    assert!(solve(&inst.problem, &o).is_err());
    let g = &inst.geometry;
    let bad_m0 = Problem::new(
        &DynamicImage::new(g.clone(), inst.problem.y().clone()).unwrap(),
        Mat::zeros(5, 3),
        Mat::zeros(6, 1),
        PsfOperator::identity(g),
        SpatialDiffOperator::new(g),
    );
    assert!(bad_m0.is_err());
}

#[test]
fn lipschitz_floor_and_single_factor_case() {
    let g = geometry([3, 2, 2], 4);
    let n = g.n_voxels();
    let y = DynamicImage::new(g.clone(), Mat::filled(4, n, 1.0)).unwrap();
    let col = Mat::column(&[0.5, 0.5, 0.5, 0.5]);
    let p = Problem::new(&y, col.clone(), Mat::zeros(4, 1), PsfOperator::identity(&g),
        SpatialDiffOperator::new(&g)).unwrap();
    let hp = Hyperparameters { alpha: 0.0, beta: 0.0, ..Default::default() };
    let zero_a = SolverState::new(col.clone(), Mat::zeros(1, n), Mat::zeros(1, n));
    let l = lipschitz_estimates(&p, &zero_a, &hp).unwrap();
    assert_eq!(l.m, LIPSCHITZ_FLOOR);
    // K = 1, unit-norm M, B = 0, alpha = 0: L_A = ||M||^2 = 1 within 1%
    let s = SolverState::new(col, Mat::filled(1, n, 1.0), Mat::zeros(1, n));
    let l = lipschitz_estimates(&p, &s, &hp).unwrap();
    assert!((l.a - 1.0).abs() <= 0.01 * 1.0 + 1e-12, "{}", l.a);
    assert!(l.a >= 1.0);
}

/// With step gamma / L the block-smooth surrogate never increases: checks
/// the Lipschitz bounds directly, without the backtracking fallback.
#[test]
fn lipschitz_bounds_give_descent() {
    use slmm_core::solver::{grad_a, grad_b, grad_m};
    use slmm_core::linops::project_simplex_columns;
    use slmm_core::cost_terms_unconstrained;
    for seed in 0..100 {
        let inst = random_instance(1000 + seed, [3, 3, 2], 6, 3, 2);
        let (p, s) = (&inst.problem, &inst.state);
        let hp = Hyperparameters { alpha: 0.5, beta: 0.3, ..Default::default() };
        let l = lipschitz_estimates(p, s, &hp).unwrap();
        let f = |m: &Mat, a: &Mat, b: &Mat| {
            cost_terms_unconstrained(m, p.v(), a, b, p.y(), p.psf(), p.sdiff(), p.m0(), &hp)
                .unwrap()
                .smooth()
        };
        let f0 = f(&s.m, &s.a, &s.b);
        let gm = grad_m(p, s, hp.beta).unwrap();
        let mut m1 = s.m.clone();
        m1.axpy(-hp.gamma / l.m, &gm);
        m1.map_inplace(|v| v.max(0.0));
        assert!(f(&m1, &s.a, &s.b) <= f0 + 1e-12, "M seed {seed}");
        let ga = grad_a(p, s, hp.alpha).unwrap();
        let mut a1 = s.a.clone();
        a1.axpy(-hp.gamma / l.a, &ga);
        let a1 = project_simplex_columns(&a1);
        assert!(f(&s.m, &a1, &s.b) <= f0 + 1e-12, "A seed {seed}");
        let gb = grad_b(p, s).unwrap();
        let mut b1 = s.b.clone();
        b1.axpy(-hp.gamma / l.b, &gb);
        b1.map_inplace(|v| v.max(0.0));
        assert!(f(&s.m, &s.a, &b1) <= f0 + 1e-12, "B seed {seed}");
    }
}
