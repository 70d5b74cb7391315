#![allow(dead_code)]

use rand::Rng;
use slmm_core::linops::{project_simplex_columns, PsfOperator, SpatialDiffOperator};
use slmm_core::rng::seeded;
use slmm_core::solver::{Problem, SolverState};
use slmm_core::{DynamicImage, ImageGeometry, Mat};

pub struct Instance {
    pub geometry: ImageGeometry,
    pub problem: Problem,
    pub state: SolverState,
}

pub fn geometry(dims: [usize; 3], frames: usize) -> ImageGeometry {
    ImageGeometry::new(dims, 2.0, ImageGeometry::linear_frames(frames, 1.0, 5.0)).unwrap()
}

pub fn random_simplex(k: usize, n: usize, rng: &mut impl Rng) -> Mat {
    let raw = Mat::from_fn(k, n, |_, _| rng.random_range(0.0..1.0));
    let sums = raw.col_sums();
    Mat::from_fn(k, n, |i, j| raw[(i, j)] / sums[j])
}

/// Random feasible point on a small grid with a Gaussian PSF.
pub fn random_instance(seed: u64, dims: [usize; 3], l: usize, k: usize, nv: usize) -> Instance {
    let mut rng = seeded(seed, 0);
    let g = geometry(dims, l);
    let n = g.n_voxels();
    let y = Mat::from_fn(l, n, |_, _| rng.random_range(0.0..2.0));
    let m0 = Mat::from_fn(l, k, |_, _| rng.random_range(0.0..1.5));
    let v = Mat::from_fn(l, nv, |_, _| rng.random_range(-1.0..1.0));
    let psf = PsfOperator::gaussian(&g, 4.4).unwrap();
    let sdiff = SpatialDiffOperator::new(&g);
    let problem = Problem::new(
        &DynamicImage::new(g.clone(), y).unwrap(),
        m0,
        v,
        psf,
        sdiff,
    )
    .unwrap();
    let m = Mat::from_fn(l, k, |_, _| rng.random_range(0.0..1.5));
    let a = project_simplex_columns(&random_simplex(k, n, &mut rng));
    let b = Mat::from_fn(nv, n, |_, _| rng.random_range(0.0..1.0));
    Instance {
        geometry: g,
        problem,
        state: SolverState::new(m, a, b),
    }
}
