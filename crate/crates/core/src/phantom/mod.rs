//! Compartment kinetics and synthetic phantom generation.
//!
//! A phantom has four factors in a fixed role order: specific binding
//! (slot 0), white matter, gray matter and blood. The specific-binding
//! region is split into four quadrants, each with its own mean variability
//! coefficient.

mod database;
mod kinetics;

pub use database::{
    build_sbf_database, extract_variability_basis, NominalRule, SbfDatabase, VariabilityBasis,
};
pub use kinetics::{
    auc, frame_average, input_tac, plasma_input, solve_2tcm, tissue_activity, InputFunction,
    KineticParams,
};

use alloc::vec::Vec;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linops::PsfOperator;
use crate::matrix::Mat;
use crate::model::{forward_model, FactorModel, ImageGeometry, ProportionMaps, VariabilityMaps};
use crate::rng::{derive_seed, seeded};

pub const N_ROLES: usize = 4;
pub const ROLE_NAMES: [&str; N_ROLES] = ["specific", "white_matter", "gray_matter", "blood"];

const TAG_DATABASE: u64 = 1;
const TAG_LAYOUT: u64 = 2;
const TAG_NOISE: u64 = 3;
const MIN_PROPORTION: f64 = 0.05;

/// Every knob of the synthetic phantom.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub voxel_size_mm: f64,
    pub n_frames: usize,
    pub first_frame_min: f64,
    pub last_frame_min: f64,
    pub input: InputFunction,
    /// Base rates of the specific-binding tissue; `k3` is varied.
    pub specific: KineticParams,
    pub white_matter: KineticParams,
    pub gray_matter: KineticParams,
    pub k3_spread_decades: f64,
    pub database_size: usize,
    pub n_basis: usize,
    pub nominal: NominalRule,
    /// Quadrant means of `b` as fractions of the largest database coefficient.
    pub subregion_levels: [f64; 4],
    /// Standard deviation of `b` relative to the quadrant mean.
    pub subregion_rel_sd: f64,
    /// Blur applied to the tissue labels to create partial-volume mixing.
    pub partial_volume_fwhm_mm: f64,
    pub fwhm_mm: f64,
    /// `None` means noiseless; serialized as `"inf"`.
    #[cfg_attr(feature = "serde", serde(with = "snr_serde"))]
    pub snr_db: Option<f64>,
}

#[cfg(feature = "serde")]
mod snr_serde {
    use alloc::string::String;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Db(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(db) if db.is_finite() => Repr::Db(*db).serialize(s),
            _ => Repr::Word("inf".into()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Db(db) if db.is_finite() => Ok(Some(db)),
            Repr::Db(db) if db == f64::INFINITY => Ok(None),
            Repr::Word(w) if w.eq_ignore_ascii_case("inf") => Ok(None),
            _ => Err(D::Error::custom("snr_db must be a number of dB or \"inf\"")),
        }
    }
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [32, 32, 16],
            voxel_size_mm: 2.0,
            n_frames: 20,
            first_frame_min: 1.0,
            last_frame_min: 5.0,
            input: InputFunction::default(),
            specific: KineticParams { k1: 0.3, k2: 0.1, k3: 0.1, k4: 0.0 },
            white_matter: KineticParams { k1: 0.1, k2: 0.1, k3: 0.0, k4: 0.0 },
            gray_matter: KineticParams { k1: 0.8, k2: 0.8, k3: 0.0, k4: 0.0 },
            k3_spread_decades: 0.5,
            database_size: 500,
            n_basis: 1,
            nominal: NominalRule::MinAuc,
            subregion_levels: [0.1, 0.35, 0.6, 0.85],
            subregion_rel_sd: 0.1,
            partial_volume_fwhm_mm: 3.0,
            fwhm_mm: 4.4,
            snr_db: Some(15.0),
        }
    }
}

impl PhantomConfig {
    pub fn geometry(&self) -> Result<ImageGeometry> {
        ImageGeometry::new(
            self.dims,
            self.voxel_size_mm,
            ImageGeometry::linear_frames(self.n_frames, self.first_frame_min, self.last_frame_min),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        self.specific.validate()?;
        self.white_matter.validate()?;
        self.gray_matter.validate()?;
        if self.subregion_levels.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::invalid("subregion_levels", "must be finite and nonnegative"));
        }
        if !(self.subregion_rel_sd >= 0.0 && self.subregion_rel_sd.is_finite()) {
            return Err(Error::invalid("subregion_rel_sd", "must be finite and nonnegative"));
        }
        if !(self.partial_volume_fwhm_mm >= 0.0 && self.fwhm_mm >= 0.0) {
            return Err(Error::invalid("fwhm_mm", "must be nonnegative"));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::invalid("snr_db", "must be a number"));
            }
        }
        Ok(())
    }
}

/// Ground truth and observations of one synthetic phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub geometry: ImageGeometry,
    /// `L x 4`, column 0 is the nominal specific-binding TAC.
    pub m: Mat,
    pub a: Mat,
    pub b: Mat,
    /// Unit-norm variability basis.
    pub v: Mat,
    pub clean: Mat,
    pub noisy: Mat,
    pub snr_db: Option<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomTruth {
    /// Voxels with a nonzero specific-binding proportion.
    pub fn sbf_region(&self) -> Vec<bool> {
        self.a.row(0).iter().map(|&v| v > 0.0).collect()
    }

    /// Noisy image for noise realization `r`; realization 0 is `self.noisy`.
    pub fn realization(&self, r: u64) -> Mat {
        add_noise(&self.clean, self.noise_sigma, derive_seed(self.seed, TAG_NOISE + r))
    }
}

/// Noise level for a global SNR of `snr_db`:
/// `sigma^2 = ||clean||^2 / (L N 10^{snr/10})`. `None` or infinity gives 0.
pub fn noise_sigma(clean: &Mat, snr_db: Option<f64>) -> f64 {
    match snr_db {
        Some(snr) if snr.is_finite() => {
            let count = (clean.rows() * clean.cols()) as f64;
            libm::sqrt(clean.frobenius_sq() / (count * libm::pow(10.0, snr / 10.0)))
        }
        _ => 0.0,
    }
}

/// White Gaussian noise with one random stream per voxel.
pub fn add_noise(clean: &Mat, sigma: f64, seed: u64) -> Mat {
    let mut out = clean.clone();
    if sigma == 0.0 {
        return out;
    }
    let (l, n) = clean.shape();
    for j in 0..n {
        let mut rng = seeded(seed, j as u64);
        for i in 0..l {
            let z: f64 = StandardNormal.sample(&mut rng);
            out[(i, j)] += sigma * z;
        }
    }
    out
}

/// Generates the database, basis and phantom from one master seed.
pub fn generate_phantom(config: &PhantomConfig, seed: u64) -> Result<PhantomTruth> {
    config.validate()?;
    let geometry = config.geometry()?;
    let db = build_sbf_database(
        &config.specific,
        &config.input,
        geometry.frame_times(),
        config.k3_spread_decades,
        config.database_size,
        derive_seed(seed, TAG_DATABASE),
    )?;
    let basis = extract_variability_basis(&db, config.n_basis, config.nominal)?;
    assemble_phantom(&geometry, config, &basis, seed)
}

fn centered(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / n as f64 - 1.0
}

fn sq(x: f64) -> f64 {
    x * x
}

fn ellipsoid(u: [f64; 3], c: [f64; 3], r: [f64; 3]) -> bool {
    (0..3).map(|k| sq((u[k] - c[k]) / r[k])).sum::<f64>() <= 1.0
}

const SBF_CENTER: [f64; 3] = [0.0, 0.45, 0.0];

/// Hard tissue label per voxel, in role order.
fn hard_labels(geometry: &ImageGeometry) -> Vec<usize> {
    let [nx, ny, nz] = geometry.dims();
    (0..geometry.n_voxels())
        .map(|n| {
            let [x, y, z] = geometry.coords(n);
            let u = [centered(x, nx), centered(y, ny), centered(z, nz)];
            let vessel = [(-0.7, -0.7), (0.7, -0.7)]
                .iter()
                .any(|&(cx, cy)| sq(u[0] - cx) + sq(u[1] - cy) <= sq(0.25));
            if vessel {
                3
            } else if ellipsoid(u, SBF_CENTER, [0.55, 0.4, 0.9]) {
                0
            } else if ellipsoid(u, [0.0, -0.3, 0.0], [0.95, 0.7, 1.0]) {
                1
            } else {
                2
            }
        })
        .collect()
}

/// Smooth simplex-valued proportions from blurred hard labels.
fn proportion_maps(geometry: &ImageGeometry, pv_fwhm_mm: f64) -> Result<Mat> {
    let labels = hard_labels(geometry);
    let n = geometry.n_voxels();
    let mut a = Mat::from_fn(N_ROLES, n, |k, j| if labels[j] == k { 1.0 } else { 0.0 });
    if pv_fwhm_mm > 0.0 {
        PsfOperator::gaussian(geometry, pv_fwhm_mm)?.apply_inplace(&mut a);
    }
    for j in 0..n {
        let mut sum: f64 = (0..N_ROLES).map(|k| a[(k, j)]).sum();
        for k in 0..N_ROLES {
            if a[(k, j)] / sum < MIN_PROPORTION {
                a[(k, j)] = 0.0;
            }
        }
        sum = (0..N_ROLES).map(|k| a[(k, j)]).sum();
        for k in 0..N_ROLES {
            a[(k, j)] /= sum;
        }
    }
    Ok(a)
}

/// Builds the proportion and variability maps, the noiseless image and one
/// noisy realization.
pub fn assemble_phantom(
    geometry: &ImageGeometry,
    config: &PhantomConfig,
    basis: &VariabilityBasis,
    seed: u64,
) -> Result<PhantomTruth> {
    let [nx, ny, nz] = geometry.dims();
    if nx < 8 || ny < 8 || nz < 4 {
        return Err(Error::invalid(
            "geometry",
            "need at least 8 x 8 x 4 voxels to host four subregions",
        ));
    }
    let frames = geometry.frame_times();
    let l = frames.len();
    if basis.nominal.len() != l {
        return Err(Error::shape("nominal TAC", (l, 1), (basis.nominal.len(), 1)));
    }
    let mut m = Mat::zeros(l, N_ROLES);
    m.set_col(0, &basis.nominal);
    m.set_col(1, &solve_2tcm(&config.white_matter, &config.input, frames)?);
    m.set_col(2, &solve_2tcm(&config.gray_matter, &config.input, frames)?);
    m.set_col(3, &input_tac(&config.input, frames)?);

    let a = proportion_maps(geometry, config.partial_volume_fwhm_mm)?;
    let n = geometry.n_voxels();
    let nv = basis.basis.cols();
    let mut b = Mat::zeros(nv, n);
    let mut counts = [0usize; 4];
    for j in 0..n {
        if a[(0, j)] <= 0.0 {
            continue;
        }
        let [x, y, _] = geometry.coords(j);
        let r = 2 * usize::from(centered(x, nx) >= SBF_CENTER[0])
            + usize::from(centered(y, ny) >= SBF_CENTER[1]);
        counts[r] += 1;
        let mut rng = seeded(derive_seed(seed, TAG_LAYOUT), j as u64);
        for c in 0..nv {
            let top = basis.projections.row(c).iter().copied().fold(0.0, f64::max);
            let mean = config.subregion_levels[r] * top;
            let z: f64 = StandardNormal.sample(&mut rng);
            b[(c, j)] = (mean + config.subregion_rel_sd * mean * z).max(0.0);
        }
    }
    if counts.contains(&0) {
        return Err(Error::invalid("geometry", "too small to host four subregions"));
    }

    let psf = PsfOperator::gaussian(geometry, config.fwhm_mm)?;
    let fm = FactorModel::new(m.clone(), basis.basis.clone())?;
    let clean = forward_model(
        &fm,
        &ProportionMaps::new(a.clone())?,
        &VariabilityMaps::new(b.clone())?,
        &psf,
    )?;
    let sigma = noise_sigma(&clean, config.snr_db);
    let noisy = add_noise(&clean, sigma, derive_seed(seed, TAG_NOISE));
    let (_, v) = fm.into_parts();
    Ok(PhantomTruth {
        geometry: geometry.clone(),
        m,
        a,
        b,
        v,
        clean,
        noisy,
        snr_db: config.snr_db,
        noise_sigma: sigma,
        seed,
    })
}
