//! NMSE scoring and multi-realization experiments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::baselines::{kmeans_init, match_factors, nmf_multiplicative, normalize_nmf, order_roles};
use crate::error::{Error, Result};
use crate::linops::{PsfOperator, SpatialDiffOperator};
use crate::matrix::Mat;
use crate::model::{DynamicImage, Hyperparameters, ImageGeometry};
use crate::phantom::{auc, generate_phantom, PhantomConfig, PhantomTruth};
use crate::rng::derive_seed;
use crate::solver::{solve_from, IterationLog, Mode, Problem, SolverOptions, SolverState};

/// `||estimate - truth||^2 / ||truth||^2`.
pub fn nmse(estimate: &Mat, truth: &Mat) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::shape("estimate", truth.shape(), estimate.shape()));
    }
    let denom = truth.frobenius_sq();
    if denom == 0.0 {
        return Err(Error::invalid("truth", "zero norm"));
    }
    Ok(estimate.sub(truth).frobenius_sq() / denom)
}

/// Scored quantities, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variable {
    A1,
    A2K,
    M1,
    M2K,
    B,
}

impl Variable {
    pub const ALL: [Variable; 5] = [Variable::A1, Variable::A2K, Variable::M1, Variable::M2K, Variable::B];

    pub fn name(self) -> &'static str {
        match self {
            Variable::A1 => "A1",
            Variable::A2K => "A2:K",
            Variable::M1 => "M1",
            Variable::M2K => "M2:K",
            Variable::B => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    Kmeans,
    Nmf,
    Lmm,
    Slmm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Kmeans, Method::Nmf, Method::Lmm, Method::Slmm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Nmf => "nmf",
            Method::Lmm => "lmm",
            Method::Slmm => "slmm",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    /// Methods whose first factor is pinned to the specific-binding role.
    pub fn role_anchored(self) -> bool {
        matches!(self, Method::Lmm | Method::Slmm)
    }
}

/// Estimated factors of one method. `b` and `v` are present only when the
/// method models variability.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub m: Mat,
    pub a: Mat,
    pub b: Option<Mat>,
    pub v: Option<Mat>,
}

/// Per-voxel specific-binding TACs `m_1 + V b_n` over the voxels in `region`.
pub fn sbf_tacs(m1: &[f64], v: Option<&Mat>, b: Option<&Mat>, region: &[bool]) -> Mat {
    let cols: Vec<usize> = (0..region.len()).filter(|&j| region[j]).collect();
    let mut out = Mat::from_fn(m1.len(), cols.len(), |i, _| m1[i]);
    if let (Some(v), Some(b)) = (v, b) {
        let vb = v.matmul(&b.select_cols(&cols));
        out.axpy(1.0, &vb);
    }
    out
}

/// Reorders an output to the role order of `truth_m`. Role-anchored outputs
/// keep their first factor and only the remaining ones are matched.
pub fn align_to_truth(out: &MethodOutput, truth_m: &Mat, anchored: bool) -> Result<MethodOutput> {
    let k = truth_m.cols();
    out.m.check_shape("estimated factors", truth_m.shape())?;
    let perm = if anchored {
        let rest: Vec<usize> = (1..k).collect();
        let p = match_factors(&out.m.select_cols(&rest), &truth_m.select_cols(&rest))?;
        core::iter::once(0).chain(p.into_iter().map(|j| j + 1)).collect()
    } else {
        match_factors(&out.m, truth_m)?
    };
    let mut a = Mat::zeros(k, out.a.cols());
    for (i, &p) in perm.iter().enumerate() {
        a.row_mut(i).copy_from_slice(out.a.row(p));
    }
    Ok(MethodOutput {
        m: out.m.select_cols(&perm),
        a,
        b: out.b.clone(),
        v: out.v.clone(),
    })
}

/// NMSE per variable; `None` where not applicable, NaN for a failed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores(pub [Option<f64>; 5]);

impl Scores {
    pub fn failed(with_b: bool) -> Self {
        let mut s = [Some(f64::NAN); 5];
        if !with_b {
            s[4] = None;
        }
        Scores(s)
    }

    pub fn get(&self, v: Variable) -> Option<f64> {
        self.0[v as usize]
    }
}

/// Scores an output already in truth role order.
pub fn score_run(truth: &PhantomTruth, out: &MethodOutput) -> Result<Scores> {
    let k = truth.m.cols();
    out.m.check_shape("estimated factors", truth.m.shape())?;
    out.a.check_shape("estimated proportions", truth.a.shape())?;
    let rest: Vec<usize> = (1..k).collect();
    let row_block = |a: &Mat, s: usize, e: usize| a.row_block(s, e);
    let region = truth.sbf_region();
    let true_sbf = sbf_tacs(&truth.m.col(0), Some(&truth.v), Some(&truth.b), &region);
    let est_sbf = sbf_tacs(&out.m.col(0), out.v.as_ref(), out.b.as_ref(), &region);
    let b = match &out.b {
        Some(b) => Some(nmse(b, &truth.b)?),
        None => None,
    };
    Ok(Scores([
        Some(nmse(&row_block(&out.a, 0, 1), &row_block(&truth.a, 0, 1))?),
        Some(nmse(&row_block(&out.a, 1, k), &row_block(&truth.a, 1, k))?),
        Some(nmse(&est_sbf, &true_sbf)?),
        Some(nmse(&out.m.select_cols(&rest), &truth.m.select_cols(&rest))?),
        b,
    ]))
}

/// Settings of a multi-realization comparison.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ExperimentConfig {
    pub phantom: PhantomConfig,
    pub hyperparameters: Hyperparameters,
    pub methods: Vec<Method>,
    pub realizations: usize,
    pub nmf_tol: f64,
    pub nmf_max_iters: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            phantom: PhantomConfig::default(),
            hyperparameters: Hyperparameters::default(),
            methods: Method::ALL.to_vec(),
            realizations: 20,
            nmf_tol: 1e-3,
            nmf_max_iters: 1000,
        }
    }
}

/// Everything shared by the realizations of one experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub truth: PhantomTruth,
    pub psf: PsfOperator,
    pub sdiff: SpatialDiffOperator,
    pub hp: Hyperparameters,
    pub nmf_tol: f64,
    pub nmf_max_iters: usize,
    pub seed: u64,
    /// Solver log interval handed to observers (0 disables).
    pub log_every: usize,
}

impl Setup {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.hyperparameters.validate()?;
        let truth = generate_phantom(&config.phantom, seed)?;
        let psf = PsfOperator::gaussian(&truth.geometry, config.phantom.fwhm_mm)?;
        let sdiff = SpatialDiffOperator::new(&truth.geometry);
        Ok(Setup {
            truth,
            psf,
            sdiff,
            hp: config.hyperparameters,
            nmf_tol: config.nmf_tol,
            nmf_max_iters: config.nmf_max_iters,
            seed,
            log_every: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub output: MethodOutput,
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

/// Everything a method needs besides the image itself.
#[derive(Debug, Clone, Copy)]
pub struct UnmixInputs<'a> {
    pub geometry: &'a ImageGeometry,
    pub n_factors: usize,
    /// Nominal specific-binding TAC. Required for SLMM; LMM falls back to
    /// ordering the initial factors by AUC.
    pub nominal: Option<&'a [f64]>,
    /// Reference TACs for slots `1..K`, used to order the initial factors.
    pub references: Option<&'a Mat>,
    /// Variability basis (SLMM only).
    pub basis: Option<&'a Mat>,
    pub psf: &'a PsfOperator,
    pub sdiff: &'a SpatialDiffOperator,
    pub hp: Hyperparameters,
    pub nmf_tol: f64,
    pub nmf_max_iters: usize,
    pub log_every: usize,
}

/// Initial factors for the PALM methods: K-means centroids ordered by role,
/// with the first column replaced by the nominal TAC when `use_nominal`.
pub fn initial_factors_from(inputs: &UnmixInputs, y: &Mat, seed: u64, use_nominal: bool) -> Result<Mat> {
    let k = inputs.n_factors;
    let km = kmeans_init(y, k, seed)?;
    let frames = inputs.geometry.frame_times();
    let order = match inputs.nominal {
        Some(nominal) => order_roles(&km.centroids, nominal, inputs.references, frames)?,
        None => {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| auc(&km.centroids.col(b), frames).total_cmp(&auc(&km.centroids.col(a), frames)));
            order
        }
    };
    let mut m0 = km.centroids.select_cols(&order);
    m0.map_inplace(|v| v.max(0.0));
    if use_nominal {
        let nominal = inputs
            .nominal
            .ok_or_else(|| Error::invalid("nominal", "SLMM needs a nominal specific-binding TAC"))?;
        m0.set_col(0, nominal);
    }
    Ok(m0)
}

/// Runs one method on the image `y`.
pub fn unmix(
    inputs: &UnmixInputs,
    method: Method,
    y: &Mat,
    seed: u64,
    observer: impl FnMut(&IterationLog),
) -> Result<MethodRun> {
    let k = inputs.n_factors;
    let (l, n) = y.shape();
    if n != inputs.geometry.n_voxels() || l != inputs.geometry.n_frames() {
        return Err(Error::shape(
            "image",
            (inputs.geometry.n_frames(), inputs.geometry.n_voxels()),
            y.shape(),
        ));
    }
    match method {
        Method::Kmeans => {
            let km = kmeans_init(y, k, seed)?;
            let mut a = Mat::zeros(k, n);
            for (j, &c) in km.labels.iter().enumerate() {
                a[(c, j)] = 1.0;
            }
            let mut m = km.centroids;
            m.map_inplace(|v| v.max(0.0));
            Ok(MethodRun {
                output: MethodOutput { m, a, b: None, v: None },
                cost_history: km.inertia_history,
                iterations: 0,
            })
        }
        Method::Nmf => {
            let mut res = nmf_multiplicative(y, k, seed, inputs.nmf_tol, inputs.nmf_max_iters)?;
            normalize_nmf(&mut res);
            Ok(MethodRun {
                output: MethodOutput { m: res.w, a: res.h, b: None, v: None },
                cost_history: res.cost_history,
                iterations: res.iterations,
            })
        }
        Method::Lmm | Method::Slmm => {
            let slmm = method == Method::Slmm;
            let m0 = initial_factors_from(inputs, y, seed, slmm)?;
            let basis = match (slmm, inputs.basis) {
                (true, Some(v)) => v.clone(),
                (true, None) => return Err(Error::invalid("basis", "SLMM needs a variability basis")),
                (false, _) => Mat::zeros(l, 0),
            };
            let image = DynamicImage::new(inputs.geometry.clone(), y.clone())?;
            let problem = Problem::new(&image, m0, basis, inputs.psf.clone(), inputs.sdiff.clone())?;
            let opts = SolverOptions {
                mode: if slmm { Mode::Slmm } else { Mode::Lmm },
                hp: inputs.hp,
                deterministic: true,
                log_every: inputs.log_every,
            };
            let res = solve_from(&problem, SolverState::initial(&problem), &opts, observer)?;
            Ok(MethodRun {
                output: MethodOutput {
                    m: res.m,
                    a: res.a,
                    b: if slmm { Some(res.b) } else { None },
                    v: if slmm { Some(problem.v().clone()) } else { None },
                },
                cost_history: res.cost_history,
                iterations: res.iterations,
            })
        }
    }
}

impl Setup {
    /// Method inputs backed by the phantom truth: its nominal TAC, basis and
    /// the remaining true factors as ordering references.
    pub fn with_inputs<T>(&self, f: impl FnOnce(&UnmixInputs) -> T) -> T {
        let truth = &self.truth;
        let nominal = truth.m.col(0);
        let rest: Vec<usize> = (1..truth.m.cols()).collect();
        let references = truth.m.select_cols(&rest);
        let inputs = UnmixInputs {
            geometry: &truth.geometry,
            n_factors: truth.m.cols(),
            nominal: Some(&nominal),
            references: Some(&references),
            basis: Some(&truth.v),
            psf: &self.psf,
            sdiff: &self.sdiff,
            hp: self.hp,
            nmf_tol: self.nmf_tol,
            nmf_max_iters: self.nmf_max_iters,
            log_every: self.log_every,
        };
        f(&inputs)
    }
}

/// Initial factors for the PALM methods on a phantom.
pub fn initial_factors(setup: &Setup, y: &Mat, seed: u64, use_nominal: bool) -> Result<Mat> {
    setup.with_inputs(|inputs| initial_factors_from(inputs, y, seed, use_nominal))
}

/// Runs one method on the image `y` of a phantom.
pub fn run_method(
    setup: &Setup,
    method: Method,
    y: &Mat,
    seed: u64,
    observer: impl FnMut(&IterationLog),
) -> Result<MethodRun> {
    setup.with_inputs(|inputs| unmix(inputs, method, y, seed, observer))
}

/// Seed of realization `r` for a method's own randomness.
pub fn realization_seed(seed: u64, r: u64) -> u64 {
    derive_seed(derive_seed(seed, 0x7261_6e64), r)
}

/// Runs and scores every method on noise realization `r`. A failing method
/// yields NaN scores and its error message.
pub fn run_realization(
    setup: &Setup,
    methods: &[Method],
    r: u64,
    mut observer: impl FnMut(Method, &IterationLog),
) -> Vec<(Method, Scores, Option<String>)> {
    let y = setup.truth.realization(r);
    let seed = realization_seed(setup.seed, r);
    methods
        .iter()
        .map(|&method| {
            let scored = run_method(setup, method, &y, seed, |log| observer(method, log))
                .and_then(|run| align_to_truth(&run.output, &setup.truth.m, method.role_anchored()))
                .and_then(|out| score_run(&setup.truth, &out));
            match scored {
                Ok(s) => (method, s, None),
                Err(e) => (method, Scores::failed(method == Method::Slmm), Some(format!("{e}"))),
            }
        })
        .collect()
}

/// Mean and population variance of one method and variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub variable: Variable,
    /// `None` when the variable does not apply to the method.
    pub stats: Option<(f64, f64)>,
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub realizations: usize,
    pub seed: u64,
}

impl ExperimentReport {
    pub fn get(&self, method: Method, variable: Variable) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.variable == variable)
            .and_then(|r| r.stats)
    }
}

/// Mean and population variance, summed in sorted order so the result does
/// not depend on the order of the samples.
pub fn mean_variance(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut d: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    d.sort_by(f64::total_cmp);
    (mean, d.iter().sum::<f64>() / n)
}

/// Aggregates per-realization scores, one inner vector per realization.
pub fn aggregate(methods: &[Method], runs: &[Vec<(Method, Scores)>], seed: u64) -> Result<ExperimentReport> {
    if runs.is_empty() {
        return Err(Error::invalid("realizations", "need at least one"));
    }
    let mut rows = Vec::new();
    for &method in methods {
        for variable in Variable::ALL {
            let samples: Vec<Option<f64>> = runs
                .iter()
                .map(|run| {
                    run.iter()
                        .find(|(m, _)| *m == method)
                        .and_then(|(_, s)| s.get(variable))
                })
                .collect();
            let stats = if samples.iter().all(Option::is_none) {
                None
            } else {
                let vals: Vec<f64> = samples.iter().map(|s| s.unwrap_or(f64::NAN)).collect();
                Some(mean_variance(&vals))
            };
            rows.push(ReportRow {
                method,
                variable,
                stats,
                realizations: runs.len(),
            });
        }
    }
    Ok(ExperimentReport {
        rows,
        realizations: runs.len(),
        seed,
    })
}

/// Phantom, every configured method on every realization, and the report.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<ExperimentReport> {
    if config.realizations == 0 {
        return Err(Error::invalid("realizations", "need at least one"));
    }
    let setup = Setup::new(config, seed)?;
    let runs: Vec<Vec<(Method, Scores)>> = (0..config.realizations as u64)
        .map(|r| {
            run_realization(&setup, &config.methods, r, |_, _| {})
                .into_iter()
                .map(|(m, s, _)| (m, s))
                .collect()
        })
        .collect();
    aggregate(&config.methods, &runs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_identities() {
        let t = Mat::from_rows(&[&[1.0, -2.0], &[3.0, 0.5]]).unwrap();
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert_eq!(nmse(&Mat::zeros(2, 2), &t).unwrap(), 1.0);
        assert_eq!(nmse(&t.scaled(2.0), &t).unwrap(), 1.0);
        assert!(nmse(&t, &Mat::zeros(2, 2)).is_err());
        assert!(nmse(&Mat::zeros(1, 2), &t).is_err());
    }

    #[test]
    fn variance_is_population_and_order_free() {
        let (m, v) = mean_variance(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_eq!(v, 1.25);
        assert_eq!(mean_variance(&[4.0, 1.0, 3.0, 2.0]), (m, v));
        assert_eq!(mean_variance(&[0.3]).1, 0.0);
    }
}
