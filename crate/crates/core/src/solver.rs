//! Proximal alternating linearized minimization (PALM) of the penalized
//! cost over `M`, `A` and `B`.
//!
//! One iteration performs, with the freshest value of the other blocks:
//!
//! 1. `M <- P+(M - gamma/L_M grad_M)`
//! 2. `A <- P_simplex(A - gamma/L_A grad_A)`
//! 3. `B <- prox_l1(P+(B - gamma/L_B grad_B))` (skipped in LMM mode)
//!
//! The Lipschitz constants are spectral-norm bounds recomputed every
//! iteration. If a block step ever violates the descent lemma for its
//! constant, the constant is doubled and the step retried, so the cost
//! never increases.
//!
//! The model image is kept in factored form: with `AH = A H` and
//! `BH = (B o 1 a_1^T) H`, the residual is `R = M AH + V BH - Y`, which
//! needs only `K + N_v` frame convolutions instead of `L`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linops::{gram_norm_sq, operator_norm_sq, project_simplex_columns_inplace, PsfOperator,
    SpatialDiffOperator};
use crate::matrix::{dot, Mat};
use crate::model::{add_weighted_rows, penalties, CostBreakdown, DynamicImage, FactorModel,
    Hyperparameters};
use crate::{Error, Result};

/// Floor applied to every Lipschitz estimate.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Spatially varying specific-binding factor.
    #[default]
    Slmm,
    /// Plain linear mixing: `B` is pinned to zero.
    Lmm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub mode: Mode,
    pub hp: Hyperparameters,
    /// Results are always reproducible here; the flag is recorded so callers
    /// can refuse nondeterministic extensions.
    pub deterministic: bool,
    /// Emit an [`IterationLog`] every `log_every` iterations (0 disables).
    pub log_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mode: Mode::Slmm,
            hp: Hyperparameters::default(),
            deterministic: true,
            log_every: 0,
        }
    }
}

/// Fixed data of one unmixing problem.
#[derive(Debug, Clone)]
pub struct Problem {
    y: Mat,
    v: Mat,
    m0: Mat,
    psf: PsfOperator,
    sdiff: SpatialDiffOperator,
    psf_norm_sq: f64,
    sdiff_norm_sq: f64,
}

impl Problem {
    /// `basis` columns are normalized to unit norm.
    pub fn new(
        y: &DynamicImage,
        m0: Mat,
        basis: Mat,
        psf: PsfOperator,
        sdiff: SpatialDiffOperator,
    ) -> Result<Self> {
        let (l, n) = y.data().shape();
        if m0.rows() != l || m0.cols() == 0 {
            return Err(Error::shape("anchor M0", (l, m0.cols().max(1)), m0.shape()));
        }
        if !m0.is_finite() {
            return Err(Error::NonFinite("anchor M0"));
        }
        if basis.rows() != l {
            return Err(Error::shape("variability basis", (l, basis.cols()), basis.shape()));
        }
        if psf.n_voxels() != n {
            return Err(Error::shape("psf grid", (n, 1), (psf.n_voxels(), 1)));
        }
        if sdiff.n_voxels() != n {
            return Err(Error::shape("difference grid", (n, 1), (sdiff.n_voxels(), 1)));
        }
        let fm = FactorModel::new(m0.map(|v| v.max(0.0)), basis)?;
        let psf_norm_sq = if psf.is_identity() {
            1.0
        } else {
            operator_norm_sq(&psf)
        };
        let sdiff_norm_sq = sdiff.norm_sq();
        let (_, v) = fm.into_parts();
        Ok(Problem {
            y: y.data().clone(),
            v,
            m0,
            psf,
            sdiff,
            psf_norm_sq,
            sdiff_norm_sq,
        })
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    /// Unit-norm variability basis.
    pub fn v(&self) -> &Mat {
        &self.v
    }

    pub fn m0(&self) -> &Mat {
        &self.m0
    }

    pub fn psf(&self) -> &PsfOperator {
        &self.psf
    }

    pub fn sdiff(&self) -> &SpatialDiffOperator {
        &self.sdiff
    }

    pub fn n_frames(&self) -> usize {
        self.y.rows()
    }

    pub fn n_voxels(&self) -> usize {
        self.y.cols()
    }

    pub fn n_factors(&self) -> usize {
        self.m0.cols()
    }

    pub fn n_basis(&self) -> usize {
        self.v.cols()
    }

    fn check_state(&self, m: &Mat, a: &Mat, b: &Mat) -> Result<()> {
        let (l, n, k) = (self.n_frames(), self.n_voxels(), self.n_factors());
        m.check_shape("factors M", (l, k))?;
        a.check_shape("proportions A", (k, n))?;
        b.check_shape("variability B", (self.n_basis(), n))?;
        Ok(())
    }

    /// `A H`, `(B o a_1) H` and the residual `M AH + V BH - Y`.
    fn evaluate(&self, m: &Mat, a: &Mat, b: &Mat, with_b: bool) -> Cache {
        let mut ah = a.clone();
        self.psf.apply_inplace(&mut ah);
        let bh = if with_b && self.n_basis() > 0 {
            let mut bh = weighted_by_first_row(b, a);
            self.psf.apply_inplace(&mut bh);
            Some(bh)
        } else {
            None
        };
        let residual = self.residual(m, &ah, bh.as_ref());
        Cache { ah, bh, residual }
    }

    fn residual(&self, m: &Mat, ah: &Mat, bh: Option<&Mat>) -> Mat {
        let mut r = m.matmul(ah);
        if let Some(bh) = bh {
            let vb = self.v.matmul(bh);
            r.axpy(1.0, &vb);
        }
        r.axpy(-1.0, &self.y);
        r
    }

    /// `[M^T R; V^T R] H^T`, split into its `K` and `N_v` row blocks.
    fn back_project(&self, m: &Mat, r: &Mat, with_b: bool) -> (Mat, Option<Mat>) {
        let mut gm = m.t_matmul(r);
        self.psf.apply_inplace(&mut gm);
        let gv = if with_b && self.n_basis() > 0 {
            let mut gv = self.v.t_matmul(r);
            self.psf.apply_inplace(&mut gv);
            Some(gv)
        } else {
            None
        };
        (gm, gv)
    }
}

/// `B o (1 a_1^T)`: each row of `B` times the first row of `A`.
fn weighted_by_first_row(b: &Mat, a: &Mat) -> Mat {
    let a1 = a.row(0);
    Mat::from_fn(b.rows(), b.cols(), |i, n| b[(i, n)] * a1[n])
}

#[derive(Debug, Clone)]
struct Cache {
    ah: Mat,
    bh: Option<Mat>,
    residual: Mat,
}

/// Per-block Lipschitz constants of the smooth part of the cost.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Lipschitz {
    pub m: f64,
    pub a: f64,
    pub b: f64,
}

/// Current iterate of the solver.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub m: Mat,
    pub a: Mat,
    pub b: Mat,
    pub iteration: usize,
    /// Cost at the initial point followed by the cost after each iteration.
    pub cost_history: Vec<f64>,
    pub lipschitz: Lipschitz,
    cache: Option<Cache>,
}

impl SolverState {
    pub fn new(m: Mat, a: Mat, b: Mat) -> Self {
        SolverState {
            m,
            a,
            b,
            iteration: 0,
            cost_history: Vec::new(),
            lipschitz: Lipschitz::default(),
            cache: None,
        }
    }

    /// `M = M0`, uniform `A`, zero `B`.
    pub fn initial(problem: &Problem) -> Self {
        Self::new(
            problem.m0().map(|v| v.max(0.0)),
            Mat::filled(
                problem.n_factors(),
                problem.n_voxels(),
                1.0 / problem.n_factors() as f64,
            ),
            Mat::zeros(problem.n_basis(), problem.n_voxels()),
        )
    }

    fn cache(&mut self, problem: &Problem, with_b: bool) -> &Cache {
        if self.cache.is_none() {
            self.cache = Some(problem.evaluate(&self.m, &self.a, &self.b, with_b));
        }
        self.cache.as_ref().expect("cache just filled")
    }
}

/// Cost terms at the state's current iterate.
pub fn state_cost(problem: &Problem, state: &SolverState, hp: &Hyperparameters) -> Result<CostBreakdown> {
    problem.check_state(&state.m, &state.a, &state.b)?;
    let cache = problem.evaluate(&state.m, &state.a, &state.b, true);
    Ok(cost_from_cache(problem, &state.m, &state.a, &state.b, &cache, hp))
}

fn cost_from_cache(
    problem: &Problem,
    m: &Mat,
    a: &Mat,
    b: &Mat,
    cache: &Cache,
    hp: &Hyperparameters,
) -> CostBreakdown {
    let (smoothness, similarity, sparsity) = penalties(m, &problem.m0, a, b, &problem.sdiff, hp);
    CostBreakdown {
        fit: 0.5 * cache.residual.frobenius_sq(),
        smoothness,
        similarity,
        sparsity,
    }
}

/// Gradient of the cost with respect to `M`:
/// `((E_1 A o V B) H - Y) H^T A^T + M (A H H^T A^T) + beta (M - M0)`.
pub fn grad_m(problem: &Problem, state: &SolverState, beta: f64) -> Result<Mat> {
    problem.check_state(&state.m, &state.a, &state.b)?;
    let cache = problem.evaluate(&state.m, &state.a, &state.b, true);
    Ok(grad_m_cached(problem, &state.m, &cache, beta))
}

fn grad_m_cached(problem: &Problem, m: &Mat, cache: &Cache, beta: f64) -> Mat {
    let mut g = cache.residual.matmul_t(&cache.ah);
    if beta > 0.0 {
        g.axpy(beta, &m.sub(&problem.m0));
    }
    g
}

/// Gradient with respect to `A`:
/// `-M^T D_A - E_1^T (D_A o V B) + alpha A S S^T`, with
/// `D_A = (Y - M A H - (E_1 A o V B) H) H^T`.
pub fn grad_a(problem: &Problem, state: &SolverState, alpha: f64) -> Result<Mat> {
    problem.check_state(&state.m, &state.a, &state.b)?;
    let cache = problem.evaluate(&state.m, &state.a, &state.b, true);
    Ok(grad_a_cached(problem, &state.m, &state.a, &state.b, &cache.residual, alpha, true))
}

fn grad_a_cached(
    problem: &Problem,
    m: &Mat,
    a: &Mat,
    b: &Mat,
    residual: &Mat,
    alpha: f64,
    with_b: bool,
) -> Mat {
    let (mut g, gv) = problem.back_project(m, residual, with_b);
    if let Some(gv) = gv {
        add_weighted_rows(g.row_mut(0), &gv, b);
    }
    if alpha > 0.0 {
        g.axpy(alpha, &problem.sdiff.gram_apply(a));
    }
    g
}

/// Gradient of the smooth part with respect to `B`:
/// `V^T [((M A + E_1 A o V B) H - Y) H^T o E_1 A]`.
pub fn grad_b(problem: &Problem, state: &SolverState) -> Result<Mat> {
    problem.check_state(&state.m, &state.a, &state.b)?;
    let cache = problem.evaluate(&state.m, &state.a, &state.b, true);
    Ok(grad_b_cached(problem, &state.a, &cache.residual))
}

fn grad_b_cached(problem: &Problem, a: &Mat, residual: &Mat) -> Mat {
    let mut gv = problem.v.t_matmul(residual);
    problem.psf.apply_inplace(&mut gv);
    weighted_by_first_row(&gv, a)
}

/// Block Lipschitz bounds at the current iterate:
///
/// * `L_M = ||A H||^2 + beta`
/// * `L_A = (||M|| + max_n ||V b_n||)^2 ||H||^2 + alpha ||S||^2`
/// * `L_B = ||V||^2 max_n a_{1,n}^2 ||H||^2`
///
/// each floored at [`LIPSCHITZ_FLOOR`].
pub fn lipschitz_estimates(
    problem: &Problem,
    state: &SolverState,
    hp: &Hyperparameters,
) -> Result<Lipschitz> {
    problem.check_state(&state.m, &state.a, &state.b)?;
    let mut ah = state.a.clone();
    problem.psf.apply_inplace(&mut ah);
    Ok(Lipschitz {
        m: lipschitz_m(&ah, hp.beta),
        a: lipschitz_a(problem, &state.m, &state.b, hp.alpha, true),
        b: lipschitz_b(problem, &state.a),
    })
}

fn lipschitz_m(ah: &Mat, beta: f64) -> f64 {
    (gram_norm_sq(&ah.matmul_t(ah)) + beta).max(LIPSCHITZ_FLOOR)
}

fn lipschitz_a(problem: &Problem, m: &Mat, b: &Mat, alpha: f64, with_b: bool) -> f64 {
    lipschitz_a_columns(problem, m, b, alpha, with_b)
        .into_iter()
        .fold(LIPSCHITZ_FLOOR, f64::max)
}

/// Per-voxel bounds `(||M|| + ||V b_n||)^2 ||H||^2 + alpha ||S||^2`; their
/// maximum is `L_A`.
fn lipschitz_a_columns(problem: &Problem, m: &Mat, b: &Mat, alpha: f64, with_b: bool) -> Vec<f64> {
    let m_norm = libm::sqrt(gram_norm_sq(&m.t_matmul(m)));
    let smooth = alpha * problem.sdiff_norm_sq;
    let bound = |vb: f64| ((m_norm + vb) * (m_norm + vb) * problem.psf_norm_sq + smooth).max(LIPSCHITZ_FLOOR);
    if with_b && problem.n_basis() > 0 {
        problem.v.matmul(b).col_norms().into_iter().map(bound).collect()
    } else {
        vec![bound(0.0); problem.n_voxels()]
    }
}

fn lipschitz_b(problem: &Problem, a: &Mat) -> f64 {
    lipschitz_b_columns(problem, a)
        .into_iter()
        .fold(LIPSCHITZ_FLOOR, f64::max)
}

/// Per-voxel bounds `||V||^2 a_{1n}^2 ||H||^2`; their maximum bounds the block.
fn lipschitz_b_columns(problem: &Problem, a: &Mat) -> Vec<f64> {
    if problem.n_basis() == 0 {
        return vec![LIPSCHITZ_FLOOR; problem.n_voxels()];
    }
    let v_norm_sq = gram_norm_sq(&problem.v.t_matmul(&problem.v));
    a.row(0)
        .iter()
        .map(|x| (v_norm_sq * x * x * problem.psf_norm_sq).max(LIPSCHITZ_FLOOR))
        .collect()
}

/// One record of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub cost: CostBreakdown,
    pub lipschitz: Lipschitz,
}

fn descent_ok(new_f: f64, old_f: f64, lin: f64, l: f64, step_sq: f64) -> bool {
    let bound = old_f + lin + 0.5 * l * step_sq;
    new_f <= bound + 1e-12 * old_f.abs().max(1.0)
}

fn sq_diff(x: &Mat, y: &Mat) -> f64 {
    x.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn lin_term(g: &Mat, new: &Mat, old: &Mat) -> f64 {
    g.as_slice()
        .iter()
        .zip(new.as_slice().iter().zip(old.as_slice()))
        .map(|(gi, (n, o))| gi * (n - o))
        .sum()
}

/// One PALM sweep over `M`, `A` and (in SLMM mode) `B`.
pub fn palm_iterate(problem: &Problem, mut state: SolverState, opts: &SolverOptions) -> Result<SolverState> {
    problem.check_state(&state.m, &state.a, &state.b)?;
    let hp = &opts.hp;
    let with_b = opts.mode == Mode::Slmm;
    if !with_b && state.b.max_abs() != 0.0 {
        state.b = Mat::zeros(problem.n_basis(), problem.n_voxels());
        state.cache = None;
    }
    let gamma = hp.gamma;
    state.cache(problem, with_b);
    let mut cache = state.cache.take().expect("cache present");
    if state.cost_history.is_empty() {
        let c = cost_from_cache(problem, &state.m, &state.a, &state.b, &cache, hp).total();
        if !c.is_finite() {
            return Err(Error::NonFinite("cost"));
        }
        state.cost_history.push(c);
    }

    // M block: smooth part is 1/2 ||R||^2 + beta/2 ||M - M0||^2.
    {
        let g = grad_m_cached(problem, &state.m, &cache, hp.beta);
        let mut l = lipschitz_m(&cache.ah, hp.beta);
        let old_f = 0.5 * cache.residual.frobenius_sq() + 0.5 * hp.beta * sq_diff(&state.m, &problem.m0);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let step = gamma / l;
            let mut m_new = state.m.clone();
            m_new.axpy(-step, &g);
            m_new.map_inplace(|v| v.max(0.0));
            let dm = m_new.sub(&state.m);
            let mut r_new = cache.residual.clone();
            r_new.axpy(1.0, &dm.matmul(&cache.ah));
            let new_f = 0.5 * r_new.frobenius_sq() + 0.5 * hp.beta * sq_diff(&m_new, &problem.m0);
            if descent_ok(new_f, old_f, dot(g.as_slice(), dm.as_slice()), l, dm.frobenius_sq()) {
                accepted = Some((m_new, r_new));
                break;
            }
            l *= 2.0;
        }
        let (m_new, r_new) = accepted.ok_or(Error::NonFinite("M step"))?;
        state.m = m_new;
        cache.residual = r_new;
        state.lipschitz.m = l;
    }

    // A block: smooth part is 1/2 ||R||^2 + alpha/2 ||A S||^2, with one
    // step size per voxel.
    {
        let g = grad_a_cached(problem, &state.m, &state.a, &state.b, &cache.residual, hp.alpha, with_b);
        let base = lipschitz_a_columns(problem, &state.m, &state.b, hp.alpha, with_b);
        let old_f = 0.5 * cache.residual.frobenius_sq() + 0.5 * hp.alpha * problem.sdiff.energy(&state.a);
        let (k, n) = state.a.shape();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut a_new = state.a.clone();
            for i in 0..k {
                for ((v, &gi), &l) in a_new.row_mut(i).iter_mut().zip(g.row(i)).zip(&base) {
                    *v -= gamma / (scale * l) * gi;
                }
            }
            project_simplex_columns_inplace(&mut a_new);
            let c_new = problem.evaluate(&state.m, &a_new, &state.b, with_b);
            let new_f = 0.5 * c_new.residual.frobenius_sq() + 0.5 * hp.alpha * problem.sdiff.energy(&a_new);
            let lin = lin_term(&g, &a_new, &state.a);
            let mut metric = 0.0;
            for j in 0..n {
                let d: f64 = (0..k).map(|i| { let e = a_new[(i, j)] - state.a[(i, j)]; e * e }).sum();
                metric += scale * base[j] * d;
            }
            if descent_ok(new_f, old_f, lin, 1.0, metric) {
                accepted = Some((a_new, c_new));
                break;
            }
            scale *= 2.0;
        }
        let (a_new, c_new) = accepted.ok_or(Error::NonFinite("A step"))?;
        state.a = a_new;
        cache = c_new;
        state.lipschitz.a = scale * base.iter().copied().fold(LIPSCHITZ_FLOOR, f64::max);
    }

    // B block: smooth part is 1/2 ||R||^2, l1 through the prox, one step
    // size per voxel.
    if with_b && problem.n_basis() > 0 {
        let g = grad_b_cached(problem, &state.a, &cache.residual);
        let base = lipschitz_b_columns(problem, &state.a);
        let old_f = 0.5 * cache.residual.frobenius_sq();
        let (nb, n) = state.b.shape();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut b_new = state.b.clone();
            for i in 0..nb {
                for ((v, &gi), &l) in b_new.row_mut(i).iter_mut().zip(g.row(i)).zip(&base) {
                    let step = gamma / (scale * l);
                    *v = (*v - step * gi - hp.lambda * step).max(0.0);
                }
            }
            let db = b_new.sub(&state.b);
            let mut bh_new = weighted_by_first_row(&b_new, &state.a);
            problem.psf.apply_inplace(&mut bh_new);
            let dbh = bh_new.sub(cache.bh.as_ref().expect("slmm cache has BH"));
            let mut r_new = cache.residual.clone();
            r_new.axpy(1.0, &problem.v.matmul(&dbh));
            let new_f = 0.5 * r_new.frobenius_sq();
            let mut metric = 0.0;
            for j in 0..n {
                let d: f64 = (0..nb).map(|i| db[(i, j)] * db[(i, j)]).sum();
                metric += scale * base[j] * d;
            }
            if descent_ok(new_f, old_f, dot(g.as_slice(), db.as_slice()), 1.0, metric) {
                accepted = Some((b_new, bh_new, r_new, scale));
                break;
            }
            scale *= 2.0;
        }
        let (b_new, bh_new, r_new, scale) = accepted.ok_or(Error::NonFinite("B step"))?;
        state.b = b_new;
        cache.bh = Some(bh_new);
        cache.residual = r_new;
        state.lipschitz.b = scale * base.iter().copied().fold(LIPSCHITZ_FLOOR, f64::max);
    } else {
        state.lipschitz.b = LIPSCHITZ_FLOOR;
    }

    let c = cost_from_cache(problem, &state.m, &state.a, &state.b, &cache, hp).total();
    if !c.is_finite() {
        return Err(Error::NonFinite("cost"));
    }
    state.cost_history.push(c);
    state.iteration += 1;
    state.cache = Some(cache);
    Ok(state)
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub m: Mat,
    pub a: Mat,
    pub b: Mat,
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    /// Whether the relative-decrease criterion fired before `max_iters`.
    pub converged: bool,
}

/// Runs PALM from `M = M0`, uniform `A` and `B = 0`.
pub fn solve(problem: &Problem, opts: &SolverOptions) -> Result<SolveResult> {
    solve_from(problem, SolverState::initial(problem), opts, |_| {})
}

/// Runs PALM from a given state until the relative cost decrease drops
/// below `epsilon` or `max_iters` sweeps have run. `observer` receives a
/// log record every `opts.log_every` iterations.
pub fn solve_from(
    problem: &Problem,
    mut state: SolverState,
    opts: &SolverOptions,
    mut observer: impl FnMut(&IterationLog),
) -> Result<SolveResult> {
    opts.hp.validate()?;
    problem.check_state(&state.m, &state.a, &state.b)?;
    if !problem.y.is_finite() {
        return Err(Error::NonFinite("observed image"));
    }
    if !(state.m.is_finite() && state.a.is_finite() && state.b.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    let mut converged = false;
    while state.iteration < opts.hp.max_iters {
        state = palm_iterate(problem, state, opts)?;
        let h = &state.cost_history;
        let (prev, cur) = (h[h.len() - 2], h[h.len() - 1]);
        if opts.log_every > 0 && state.iteration % opts.log_every == 0 {
            let cache = state.cache.as_ref().expect("cache after iterate");
            observer(&IterationLog {
                iteration: state.iteration,
                cost: cost_from_cache(problem, &state.m, &state.a, &state.b, cache, &opts.hp),
                lipschitz: state.lipschitz,
            });
        }
        if prev > 0.0 && (prev - cur).abs() / prev < opts.hp.epsilon {
            converged = true;
            break;
        }
        if prev == 0.0 && cur == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        m: state.m,
        a: state.a,
        b: state.b,
        cost_history: state.cost_history,
        iterations: state.iteration,
        converged,
    })
}
