use crate::matrix::Mat;
use crate::model::ImageGeometry;
use crate::{Error, Result};

/// First-order forward differences along the three spatial axes.
///
/// Applied to a `K x N` map it returns `K x 3N`: the x, y and z difference
/// blocks side by side. Voxels on the far face of an axis get a zero
/// difference along that axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialDiffOperator {
    dims: [usize; 3],
}

impl SpatialDiffOperator {
    pub fn new(geometry: &ImageGeometry) -> Self {
        SpatialDiffOperator {
            dims: geometry.dims(),
        }
    }

    pub fn from_dims(dims: [usize; 3]) -> Self {
        SpatialDiffOperator { dims }
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    fn strides(&self) -> [usize; 3] {
        let [_, ny, nz] = self.dims;
        [ny * nz, nz, 1]
    }

    /// `A S`.
    pub fn apply(&self, a: &Mat) -> Result<Mat> {
        let n = self.n_voxels();
        if a.cols() != n {
            return Err(Error::shape("difference input", (a.rows(), n), a.shape()));
        }
        let mut out = Mat::zeros(a.rows(), 3 * n);
        for k in 0..a.rows() {
            let src = a.row(k);
            let dst = out.row_mut(k);
            self.for_each_edge(|axis, from, to| {
                dst[axis * n + from] = src[to] - src[from];
            });
        }
        Ok(out)
    }

    /// `G S^T`.
    pub fn adjoint(&self, g: &Mat) -> Result<Mat> {
        let n = self.n_voxels();
        if g.cols() != 3 * n {
            return Err(Error::shape("difference adjoint input", (g.rows(), 3 * n), g.shape()));
        }
        let mut out = Mat::zeros(g.rows(), n);
        for k in 0..g.rows() {
            let src = g.row(k);
            let dst = out.row_mut(k);
            self.for_each_edge(|axis, from, to| {
                let d = src[axis * n + from];
                dst[to] += d;
                dst[from] -= d;
            });
        }
        Ok(out)
    }

    /// `A S S^T` without forming the `3N` intermediate.
    pub fn gram_apply(&self, a: &Mat) -> Mat {
        debug_assert_eq!(a.cols(), self.n_voxels());
        let mut out = Mat::zeros(a.rows(), a.cols());
        for k in 0..a.rows() {
            let src = a.row(k);
            let dst = out.row_mut(k);
            self.for_each_edge(|_, from, to| {
                let d = src[to] - src[from];
                dst[to] += d;
                dst[from] -= d;
            });
        }
        out
    }

    /// `||A S||_F^2`.
    pub fn energy(&self, a: &Mat) -> f64 {
        debug_assert_eq!(a.cols(), self.n_voxels());
        let mut e = 0.0;
        for k in 0..a.rows() {
            let src = a.row(k);
            self.for_each_edge(|_, from, to| {
                let d = src[to] - src[from];
                e += d * d;
            });
        }
        e
    }

    /// Exact `||S||_2^2`: the largest eigenvalue of a path-graph Laplacian of
    /// length `n` is `2 - 2 cos(pi (n - 1) / n)`, and the 3-D operator is the
    /// Kronecker sum of the per-axis ones.
    pub fn norm_sq(&self) -> f64 {
        self.dims
            .iter()
            .map(|&n| {
                if n <= 1 {
                    0.0
                } else {
                    2.0 - 2.0 * libm::cos(core::f64::consts::PI * (n - 1) as f64 / n as f64)
                }
            })
            .sum()
    }

    /// Calls `f(axis, voxel, forward_neighbor)` for every neighbor pair.
    #[inline]
    fn for_each_edge(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [nx, ny, nz] = self.dims;
        let strides = self.strides();
        for x in 0..nx {
            for y in 0..ny {
                let base = (x * ny + y) * nz;
                for z in 0..nz {
                    let n = base + z;
                    if x + 1 < nx {
                        f(0, n, n + strides[0]);
                    }
                    if y + 1 < ny {
                        f(1, n, n + strides[1]);
                    }
                    if z + 1 < nz {
                        f(2, n, n + 1);
                    }
                }
            }
        }
    }
}
