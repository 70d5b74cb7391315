//! Data types of the specific-binding mixing model, the forward model and
//! the penalized cost.
//!
//! A dynamic image is an `L x N` matrix `Y` (frames by voxels). It is
//! explained by `K` factor TACs `M` (the first column is the nominal
//! specific-binding factor), per-voxel proportions `A` on the unit simplex
//! and nonnegative variability coefficients `B` that perturb the first
//! factor along the basis `V`:
//!
//! ```text
//! Y ~ (M A + (1 a_1^T) o (V B)) H
//! ```
//!
//! where `a_1` is the first row of `A` and `H` is the spatial PSF.

use alloc::format;
use alloc::vec::Vec;

use crate::linops::{PsfOperator, SpatialDiffOperator};
use crate::matrix::Mat;
use crate::{Error, Result};

/// Voxel grid and frame timing of a dynamic acquisition.
///
/// Voxels are linearized with `z` fastest: `n = (x * ny + y) * nz + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGeometry {
    nx: usize,
    ny: usize,
    nz: usize,
    voxel_size_mm: f64,
    frame_times: Vec<(f64, f64)>,
}

impl ImageGeometry {
    /// `frame_times` are `(start, end)` pairs in seconds.
    pub fn new(
        dims: [usize; 3],
        voxel_size_mm: f64,
        frame_times: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let [nx, ny, nz] = dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid("geometry", "every axis needs at least one voxel"));
        }
        if !(voxel_size_mm > 0.0 && voxel_size_mm.is_finite()) {
            return Err(Error::invalid("voxel_size_mm", "must be positive and finite"));
        }
        if frame_times.len() < 2 {
            return Err(Error::invalid("frame_times", "at least two frames are required"));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for (i, &(start, end)) in frame_times.iter().enumerate() {
            if !(start.is_finite() && end.is_finite() && start < end) {
                return Err(Error::invalid("frame_times", format!("frame {i} has start >= end")));
            }
            if start < prev_end {
                return Err(Error::invalid(
                    "frame_times",
                    format!("frame {i} overlaps or precedes the previous frame"),
                ));
            }
            prev_end = end;
        }
        Ok(ImageGeometry {
            nx,
            ny,
            nz,
            voxel_size_mm,
            frame_times,
        })
    }

    /// Contiguous frames whose durations grow linearly from `first_min` to
    /// `last_min` minutes, starting at `t = 0`.
    pub fn linear_frames(n_frames: usize, first_min: f64, last_min: f64) -> Vec<(f64, f64)> {
        let mut t = 0.0;
        (0..n_frames)
            .map(|i| {
                let frac = if n_frames > 1 {
                    i as f64 / (n_frames - 1) as f64
                } else {
                    0.0
                };
                let d = 60.0 * (first_min + (last_min - first_min) * frac);
                let frame = (t, t + d);
                t += d;
                frame
            })
            .collect()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn n_frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn voxel_size_mm(&self) -> f64 {
        self.voxel_size_mm
    }

    pub fn frame_times(&self) -> &[(f64, f64)] {
        &self.frame_times
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.ny + y) * self.nz + z
    }

    #[inline]
    pub fn coords(&self, n: usize) -> [usize; 3] {
        let z = n % self.nz;
        let y = (n / self.nz) % self.ny;
        let x = n / (self.nz * self.ny);
        [x, y, z]
    }

    /// Same voxel grid with different frames.
    pub fn with_frames(&self, frame_times: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(self.dims(), self.voxel_size_mm, frame_times)
    }
}

/// An `L x N` dynamic image on a geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicImage {
    geometry: ImageGeometry,
    data: Mat,
}

impl DynamicImage {
    pub fn new(geometry: ImageGeometry, data: Mat) -> Result<Self> {
        data.check_shape("image data", (geometry.n_frames(), geometry.n_voxels()))?;
        if !data.is_finite() {
            return Err(Error::NonFinite("image data"));
        }
        Ok(DynamicImage { geometry, data })
    }

    pub fn geometry(&self) -> &ImageGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &Mat {
        &self.data
    }

    pub fn into_data(self) -> Mat {
        self.data
    }
}

/// Factor TACs `M` (`L x K`) and the variability basis `V` (`L x N_v`).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    m: Mat,
    v: Mat,
}

impl FactorModel {
    /// Columns of `basis` are rescaled to unit norm; use
    /// [`FactorModel::basis_scales`] first if the scale must be moved into `B`.
    pub fn new(factors: Mat, basis: Mat) -> Result<Self> {
        let l = factors.rows();
        if factors.cols() == 0 {
            return Err(Error::invalid("factors", "need at least one factor"));
        }
        basis.check_shape("variability basis", (l, basis.cols()))?;
        if basis.cols() >= l {
            return Err(Error::invalid("variability basis", "N_v must be smaller than L"));
        }
        if !factors.is_finite() || !basis.is_finite() {
            return Err(Error::NonFinite("factor model"));
        }
        if factors.min() < 0.0 {
            return Err(Error::invalid("factors", "factor TACs must be nonnegative"));
        }
        Ok(FactorModel {
            m: factors,
            v: normalize_columns(&basis),
        })
    }

    /// Model with `N_v = 0`: plain linear mixing.
    pub fn without_variability(factors: Mat) -> Result<Self> {
        let l = factors.rows();
        Self::new(factors, Mat::zeros(l, 0))
    }

    /// Euclidean norms of the columns of a raw basis (1 for a zero column).
    pub fn basis_scales(basis: &Mat) -> Vec<f64> {
        basis
            .col_norms()
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect()
    }

    pub fn m(&self) -> &Mat {
        &self.m
    }

    pub fn v(&self) -> &Mat {
        &self.v
    }

    pub fn n_frames(&self) -> usize {
        self.m.rows()
    }

    pub fn n_factors(&self) -> usize {
        self.m.cols()
    }

    pub fn n_basis(&self) -> usize {
        self.v.cols()
    }

    pub fn into_parts(self) -> (Mat, Mat) {
        (self.m, self.v)
    }
}

fn normalize_columns(basis: &Mat) -> Mat {
    let scales = FactorModel::basis_scales(basis);
    Mat::from_fn(basis.rows(), basis.cols(), |i, j| basis[(i, j)] / scales[j])
}

/// Factor proportions `A` (`K x N`), columns on the unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionMaps(Mat);

impl ProportionMaps {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(a: Mat) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::NonFinite("proportions"));
        }
        if a.rows() == 0 {
            return Err(Error::invalid("proportions", "need at least one factor row"));
        }
        if a.min() < 0.0 {
            return Err(Error::invalid("proportions", "entries must be nonnegative"));
        }
        for (n, s) in a.col_sums().into_iter().enumerate() {
            if (s - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(Error::invalid(
                    "proportions",
                    format!("column {n} sums to {s}, not 1"),
                ));
            }
        }
        Ok(ProportionMaps(a))
    }

    /// Every voxel split evenly between the `k` factors.
    pub fn uniform(k: usize, n: usize) -> Self {
        ProportionMaps(Mat::filled(k, n, 1.0 / k as f64))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

/// Variability coefficients `B` (`N_v x N`), nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct VariabilityMaps(Mat);

impl VariabilityMaps {
    pub fn new(b: Mat) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::NonFinite("variability coefficients"));
        }
        if b.min() < 0.0 {
            return Err(Error::invalid("variability coefficients", "entries must be nonnegative"));
        }
        Ok(VariabilityMaps(b))
    }

    pub fn zeros(n_basis: usize, n: usize) -> Self {
        VariabilityMaps(Mat::zeros(n_basis, n))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

/// Penalty weights and stopping parameters of the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Hyperparameters {
    /// Spatial smoothness of the proportions.
    pub alpha: f64,
    /// Similarity of the factors to their initial estimates.
    pub beta: f64,
    /// Sparsity of the variability coefficients.
    pub lambda: f64,
    /// Relative cost decrease below which the solver stops.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Step safety factor in `(0, 1]`.
    pub gamma: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            alpha: 0.010,
            beta: 0.010,
            lambda: 0.020,
            epsilon: 0.001,
            max_iters: 500,
            gamma: 0.99,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(name, "penalty weights must be finite and >= 0"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "stopping threshold must be > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma", "step safety must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// `M A + (1 a_1^T) o (V B)` without the PSF. Shapes must already agree.
pub(crate) fn mixture(m: &Mat, v: &Mat, a: &Mat, b: &Mat) -> Mat {
    let mut x = m.matmul(a);
    if v.cols() > 0 {
        let vb = v.matmul(b);
        let a1 = a.row(0);
        for l in 0..x.rows() {
            let vb_row = vb.row(l);
            for ((xi, &s), &w) in x.row_mut(l).iter_mut().zip(vb_row).zip(a1) {
                *xi += s * w;
            }
        }
    }
    x
}

pub(crate) fn check_dims(
    fm: &FactorModel,
    a: &Mat,
    b: &Mat,
    n_voxels: usize,
) -> Result<()> {
    let k = fm.n_factors();
    a.check_shape("proportions A", (k, n_voxels))?;
    b.check_shape("variability B", (fm.n_basis(), n_voxels))?;
    Ok(())
}

/// Noiseless model image `M A H + [E_1 A o V B] H`.
pub fn forward_model(
    fm: &FactorModel,
    a: &ProportionMaps,
    b: &VariabilityMaps,
    psf: &PsfOperator,
) -> Result<Mat> {
    check_dims(fm, a.as_mat(), b.as_mat(), psf.n_voxels())?;
    let x = mixture(fm.m(), fm.v(), a.as_mat(), b.as_mat());
    psf.apply(&x)
}

/// The four terms of the cost, already weighted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    /// `1/2 ||Y - model||_F^2`
    pub fit: f64,
    /// `alpha/2 ||A S||_F^2`
    pub smoothness: f64,
    /// `beta/2 ||M - M0||_F^2`
    pub similarity: f64,
    /// `lambda ||B||_1`
    pub sparsity: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.fit + self.smoothness + self.similarity + self.sparsity
    }

    /// Everything except the nonsmooth l1 term.
    pub fn smooth(&self) -> f64 {
        self.fit + self.smoothness + self.similarity
    }
}

pub(crate) fn penalties(
    m: &Mat,
    m0: &Mat,
    a: &Mat,
    b: &Mat,
    sdiff: &SpatialDiffOperator,
    hp: &Hyperparameters,
) -> (f64, f64, f64) {
    let smoothness = if hp.alpha > 0.0 {
        0.5 * hp.alpha * sdiff.energy(a)
    } else {
        0.0
    };
    let similarity = if hp.beta > 0.0 {
        let mut d = 0.0;
        for (x, y) in m.as_slice().iter().zip(m0.as_slice()) {
            d += (x - y) * (x - y);
        }
        0.5 * hp.beta * d
    } else {
        0.0
    };
    let sparsity = hp.lambda * b.l1();
    (smoothness, similarity, sparsity)
}

/// Weighted cost terms at `(M, A, B)`.
#[allow(clippy::too_many_arguments)]
pub fn cost_terms(
    fm: &FactorModel,
    a: &ProportionMaps,
    b: &VariabilityMaps,
    y: &DynamicImage,
    psf: &PsfOperator,
    sdiff: &SpatialDiffOperator,
    m0: &Mat,
    hp: &Hyperparameters,
) -> Result<CostBreakdown> {
    cost_terms_unconstrained(fm.m(), fm.v(), a.as_mat(), b.as_mat(), y.data(), psf, sdiff, m0, hp)
}

/// Cost terms for raw matrices. Only shapes are checked, so the cost can be
/// evaluated off the feasible set (finite differences, line searches).
#[allow(clippy::too_many_arguments)]
pub fn cost_terms_unconstrained(
    m: &Mat,
    v: &Mat,
    a: &Mat,
    b: &Mat,
    y: &Mat,
    psf: &PsfOperator,
    sdiff: &SpatialDiffOperator,
    m0: &Mat,
    hp: &Hyperparameters,
) -> Result<CostBreakdown> {
    let (l, n) = y.shape();
    m.check_shape("factors M", (l, m.cols()))?;
    v.check_shape("variability basis", (l, v.cols()))?;
    a.check_shape("proportions A", (m.cols(), n))?;
    b.check_shape("variability B", (v.cols(), n))?;
    m0.check_shape("anchor M0", m.shape())?;
    if psf.n_voxels() != n {
        return Err(Error::shape("psf grid", (n, 1), (psf.n_voxels(), 1)));
    }
    if sdiff.n_voxels() != n {
        return Err(Error::shape("difference grid", (n, 1), (sdiff.n_voxels(), 1)));
    }
    let model = psf.apply(&mixture(m, v, a, b))?;
    let mut fit = 0.0;
    for (p, q) in model.as_slice().iter().zip(y.as_slice()) {
        fit += (q - p) * (q - p);
    }
    let (smoothness, similarity, sparsity) = penalties(m, m0, a, b, sdiff, hp);
    Ok(CostBreakdown {
        fit: 0.5 * fit,
        smoothness,
        similarity,
        sparsity,
    })
}

/// `1/2 ||Y - model||^2 + alpha/2 ||A S||^2 + beta/2 ||M - M0||^2 + lambda ||B||_1`.
#[allow(clippy::too_many_arguments)]
pub fn cost(
    fm: &FactorModel,
    a: &ProportionMaps,
    b: &VariabilityMaps,
    y: &DynamicImage,
    psf: &PsfOperator,
    sdiff: &SpatialDiffOperator,
    m0: &Mat,
    hp: &Hyperparameters,
) -> Result<f64> {
    cost_terms(fm, a, b, y, psf, sdiff, m0, hp).map(|c| c.total())
}

/// `a_1^T`-weighted sum: adds `sum_i row_i(src) o b_i` to `dst`. Helper for the
/// `E_1^T (D o V B)` term.
pub(crate) fn add_weighted_rows(dst: &mut [f64], src: &Mat, b: &Mat) {
    for i in 0..b.rows() {
        let b_row = b.row(i);
        let s_row = src.row(i);
        for ((d, &s), &w) in dst.iter_mut().zip(s_row).zip(b_row) {
            *d += s * w;
        }
    }
}
