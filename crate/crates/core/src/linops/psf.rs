use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::Mat;
use crate::model::ImageGeometry;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsfMode {
    Identity,
    Gaussian,
}

/// Standard deviation of a Gaussian with the given full width at half maximum.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * libm::sqrt(2.0 * core::f64::consts::LN_2))
}

/// Spatially invariant, isotropic Gaussian blur applied to every frame.
///
/// The 1-D kernel is truncated at `ceil(3 sigma)` taps and renormalized to
/// unit mass; frames are zero-padded, so the operator is symmetric and
/// its norm is at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfOperator {
    dims: [usize; 3],
    fwhm_mm: f64,
    mode: PsfMode,
    taps: Vec<f64>,
}

impl PsfOperator {
    pub fn identity(geometry: &ImageGeometry) -> Self {
        PsfOperator {
            dims: geometry.dims(),
            fwhm_mm: 0.0,
            mode: PsfMode::Identity,
            taps: vec![1.0],
        }
    }

    pub fn gaussian(geometry: &ImageGeometry, fwhm_mm: f64) -> Result<Self> {
        if !(fwhm_mm >= 0.0 && fwhm_mm.is_finite()) {
            return Err(Error::invalid("fwhm_mm", "must be finite and >= 0"));
        }
        let sigma = fwhm_to_sigma(fwhm_mm) / geometry.voxel_size_mm();
        let radius = libm::ceil(3.0 * sigma) as usize;
        if radius == 0 {
            return Ok(Self::identity(geometry));
        }
        let mut taps: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                if sigma > 0.0 {
                    libm::exp(-d * d / (2.0 * sigma * sigma))
                } else {
                    1.0
                }
            })
            .collect();
        let mass: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= mass;
        }
        Ok(PsfOperator {
            dims: geometry.dims(),
            fwhm_mm,
            mode: PsfMode::Gaussian,
            taps,
        })
    }

    pub fn mode(&self) -> PsfMode {
        self.mode
    }

    pub fn fwhm_mm(&self) -> f64 {
        self.fwhm_mm
    }

    /// Kernel taps, index `radius` is the center.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_identity(&self) -> bool {
        self.mode == PsfMode::Identity || self.taps.len() == 1 && self.taps[0] == 1.0
    }

    fn check(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.n_voxels() {
            return Err(Error::shape(
                "psf input",
                (x.rows(), self.n_voxels()),
                x.shape(),
            ));
        }
        Ok(())
    }

    /// Convolves every row (frame) of `x`.
    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        self.check(x)?;
        let mut out = x.clone();
        self.apply_inplace(&mut out);
        Ok(out)
    }

    /// Adjoint under the Frobenius inner product. The kernel is symmetric and
    /// the padding is zero, so this is the same convolution.
    pub fn adjoint(&self, x: &Mat) -> Result<Mat> {
        self.apply(x)
    }

    /// Convolves every row of `x` in place. `x` must have `n_voxels` columns.
    pub fn apply_inplace(&self, x: &mut Mat) {
        debug_assert_eq!(x.cols(), self.n_voxels());
        if self.is_identity() {
            return;
        }
        let mut scratch = Scratch::new(self.dims);
        for r in 0..x.rows() {
            self.convolve_frame(x.row_mut(r), &mut scratch);
        }
    }

    /// Convolves one frame in place.
    pub fn apply_frame(&self, frame: &mut [f64]) {
        debug_assert_eq!(frame.len(), self.n_voxels());
        if self.is_identity() {
            return;
        }
        let mut scratch = Scratch::new(self.dims);
        self.convolve_frame(frame, &mut scratch);
    }

    fn convolve_frame(&self, frame: &mut [f64], scratch: &mut Scratch) {
        let [nx, ny, nz] = self.dims;
        // (axis length, stride, number of lines, line start for line index)
        let strides = [ny * nz, nz, 1];
        let lens = [nx, ny, nz];
        for axis in 0..3 {
            let len = lens[axis];
            let stride = strides[axis];
            let line_in = &mut scratch.line_in[..len];
            let line_out = &mut scratch.line_out[..len];
            let n = frame.len();
            for start in 0..n {
                // A line starts at voxels whose coordinate along `axis` is 0.
                if (start / stride) % len != 0 {
                    continue;
                }
                for (i, v) in line_in.iter_mut().enumerate() {
                    *v = frame[start + i * stride];
                }
                convolve_line(&self.taps, line_in, line_out);
                for (i, v) in line_out.iter().enumerate() {
                    frame[start + i * stride] = *v;
                }
            }
        }
    }
}

struct Scratch {
    line_in: Vec<f64>,
    line_out: Vec<f64>,
}

impl Scratch {
    fn new(dims: [usize; 3]) -> Self {
        let m = dims.iter().copied().max().unwrap_or(1);
        Scratch {
            line_in: vec![0.0; m],
            line_out: vec![0.0; m],
        }
    }
}

/// Zero-padded correlation with a symmetric odd-length kernel.
fn convolve_line(taps: &[f64], input: &[f64], output: &mut [f64]) {
    let r = taps.len() / 2;
    let n = input.len();
    for (i, out) in output.iter_mut().enumerate() {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        let mut acc = 0.0;
        for (j, x) in input[lo..=hi].iter().enumerate() {
            acc += taps[lo + j + r - i] * x;
        }
        *out = acc;
    }
}
