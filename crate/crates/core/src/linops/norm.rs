use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::{PsfOperator, SpatialDiffOperator};
use crate::matrix::{dot, norm, Mat};
use crate::rng::seeded;

/// Factor applied to power-iteration estimates so they bound the true value.
pub const NORM_INFLATION: f64 = 1.01;
const MAX_ITERS: usize = 50;
const REL_TOL: f64 = 1e-6;

/// A linear map on flat vectors with its adjoint.
pub trait LinearOperator {
    fn input_len(&self) -> usize;
    fn apply_vec(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint_vec(&self, y: &[f64]) -> Vec<f64>;
}

impl LinearOperator for Mat {
    fn input_len(&self) -> usize {
        self.cols()
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|i| dot(self.row(i), x)).collect()
    }

    fn adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for (i, &yi) in y.iter().enumerate() {
            crate::matrix::axpy(yi, self.row(i), &mut out);
        }
        out
    }
}

/// A single frame through the PSF.
impl LinearOperator for PsfOperator {
    fn input_len(&self) -> usize {
        self.n_voxels()
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.apply_frame(&mut out);
        out
    }

    fn adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        self.apply_vec(y)
    }
}

/// A single map through the difference operator.
impl LinearOperator for SpatialDiffOperator {
    fn input_len(&self) -> usize {
        self.n_voxels()
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let m = Mat::from_vec(1, x.len(), x.to_vec()).expect("row vector");
        self.apply(&m).expect("matching grid").into_vec()
    }

    fn adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        let m = Mat::from_vec(1, y.len(), y.to_vec()).expect("row vector");
        self.adjoint(&m).expect("matching grid").into_vec()
    }
}

/// Upper estimate of `||op||_2^2` by power iteration on `op^T op`, inflated
/// by [`NORM_INFLATION`]. Stops after 50 iterations or when the estimate
/// changes by less than 1e-6 relatively.
pub fn operator_norm_sq(op: &impl LinearOperator) -> f64 {
    let n = op.input_len();
    if n == 0 {
        return 0.0;
    }
    let mut rng = seeded(0x5eed, 0);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut estimate = 0.0;
    for _ in 0..MAX_ITERS {
        let y = op.apply_vec(&x);
        let next = dot(&y, &y);
        let z = op.adjoint_vec(&y);
        let nz = norm(&z);
        let converged = (next - estimate).abs() <= REL_TOL * next;
        estimate = next;
        if nz == 0.0 || converged {
            break;
        }
        x = z.into_iter().map(|v| v / nz).collect();
    }
    estimate * NORM_INFLATION
}

/// Largest eigenvalue of a small symmetric PSD Gram matrix `X X^T`, i.e.
/// `||X||_2^2`, estimated the same way as [`operator_norm_sq`].
pub fn gram_norm_sq(gram: &Mat) -> f64 {
    debug_assert_eq!(gram.rows(), gram.cols());
    let k = gram.rows();
    if k == 0 {
        return 0.0;
    }
    if k == 1 {
        return gram[(0, 0)].max(0.0) * NORM_INFLATION;
    }
    // Start from the diagonal, which has a nonzero component on the leading
    // eigenvector of any nonzero PSD matrix.
    let mut x: Vec<f64> = (0..k).map(|i| gram[(i, i)].max(0.0) + 1e-3).collect();
    let mut estimate = 0.0;
    for _ in 0..MAX_ITERS {
        let nx = norm(&x);
        if nx == 0.0 {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y = gram.apply_vec(&x);
        let next = dot(&x, &y);
        let converged = (next - estimate).abs() <= REL_TOL * next.abs();
        estimate = next;
        x = y;
        if converged {
            break;
        }
    }
    estimate.max(0.0) * NORM_INFLATION
}
