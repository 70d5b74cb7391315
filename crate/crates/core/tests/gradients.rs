//! Block gradients against central finite differences of the cost.

mod common;

use common::random_instance;
use slmm_core::solver::{grad_a, grad_b, grad_m, Problem, SolverState};
use slmm_core::{cost_terms_unconstrained, Hyperparameters, Mat};

const STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-5;

fn hp(lambda: f64) -> Hyperparameters {
    Hyperparameters {
        alpha: 0.3,
        beta: 0.2,
        lambda,
        ..Default::default()
    }
}

fn smooth_cost(p: &Problem, m: &Mat, a: &Mat, b: &Mat, hp: &Hyperparameters) -> f64 {
    cost_terms_unconstrained(m, p.v(), a, b, p.y(), p.psf(), p.sdiff(), p.m0(), hp)
        .unwrap()
        .smooth()
}

/// Central differences of `f` around `x`, entry by entry.
fn fd(x: &Mat, f: impl Fn(&Mat) -> f64) -> Mat {
    let mut g = Mat::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut xp = x.clone();
            xp[(i, j)] += STEP;
            let mut xm = x.clone();
            xm[(i, j)] -= STEP;
            g[(i, j)] = (f(&xp) - f(&xm)) / (2.0 * STEP);
        }
    }
    g
}

/// Largest entrywise error relative to the gradient's scale.
fn rel_error(analytic: &Mat, numeric: &Mat) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs()).max(1e-12);
    analytic.sub(numeric).max_abs() / scale
}

pub fn check_point(seed: u64, dims: [usize; 3], l: usize, k: usize, nv: usize) -> [f64; 3] {
    let inst = random_instance(seed, dims, l, k, nv);
    let (p, s) = (&inst.problem, &inst.state);
    let h = hp(0.0);
    let gm = grad_m(p, s, h.beta).unwrap();
    let fm = fd(&s.m, |m| smooth_cost(p, m, &s.a, &s.b, &h));
    let ga = grad_a(p, s, h.alpha).unwrap();
    let fa = fd(&s.a, |a| smooth_cost(p, &s.m, a, &s.b, &h));
    let gb = grad_b(p, s).unwrap();
    let fb = fd(&s.b, |b| smooth_cost(p, &s.m, &s.a, b, &h));
    [rel_error(&gm, &fm), rel_error(&ga, &fa), rel_error(&gb, &fb)]
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        let errs = check_point(seed, [4, 4, 2], 6, 3, 2);
        for (name, e) in ["M", "A", "B"].iter().zip(errs) {
            assert!(e <= REL_TOL, "grad {name} seed {seed}: {e:e}");
        }
    }
}

#[test]
fn least_squares_special_cases() {
    // beta = 0, B = 0, identity PSF: grad_M = (MA - Y) A^T, grad_A = -M^T (Y - MA)
    let inst = random_instance(9, [3, 2, 2], 5, 3, 1);
    let g = &inst.geometry;
    let p = Problem::new(
        &slmm_core::DynamicImage::new(g.clone(), inst.problem.y().clone()).unwrap(),
        inst.problem.m0().clone(),
        inst.problem.v().clone(),
        slmm_core::linops::PsfOperator::identity(g),
        slmm_core::linops::SpatialDiffOperator::new(g),
    )
    .unwrap();
    let s = SolverState::new(inst.state.m.clone(), inst.state.a.clone(), Mat::zeros(1, g.n_voxels()));
    let r = s.m.matmul(&s.a).sub(p.y());
    let gm = grad_m(&p, &s, 0.0).unwrap();
    assert!(gm.sub(&r.matmul_t(&s.a)).max_abs() < 1e-12);
    let ga = grad_a(&p, &s, 0.0).unwrap();
    assert!(ga.sub(&s.m.t_matmul(&r)).max_abs() < 1e-12);
}

#[test]
fn variability_gradient_vanishes_without_specific_binding() {
    let mut inst = random_instance(4, [3, 3, 2], 6, 3, 2);
    let n = inst.geometry.n_voxels();
    // a_1 = 0 everywhere, remaining mass on factor 2
    for j in 0..n {
        let a1 = inst.state.a[(0, j)];
        inst.state.a[(0, j)] = 0.0;
        inst.state.a[(1, j)] += a1;
    }
    let gb = grad_b(&inst.problem, &inst.state).unwrap();
    assert_eq!(gb.max_abs(), 0.0);
}
