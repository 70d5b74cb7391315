//! Linear operators and constraint operators used by the model and solver.

mod norm;
mod projection;
mod psf;
mod sdiff;

pub use norm::{gram_norm_sq, operator_norm_sq, LinearOperator, NORM_INFLATION};
pub use projection::{project_nonneg, project_simplex, project_simplex_columns, prox_l1_nonneg};
pub(crate) use projection::project_simplex_columns_inplace;
pub use psf::{fwhm_to_sigma, PsfMode, PsfOperator};
pub use sdiff::SpatialDiffOperator;
