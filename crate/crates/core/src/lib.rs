//! Factor analysis of dynamic PET images with a spatially varying
//! specific-binding factor.
//!
//! The crate is `no_std` (it needs `alloc`) and carries the numerical core:
//!
//! * [`model`]: data types, the forward model and the penalized cost.
//! * [`linops`]: PSF convolution, spatial differences, projections, prox.
//! * [`solver`]: block proximal-gradient (PALM) minimization.
//! * [`baselines`]: K-means, multiplicative-update NMF, factor matching.
//! * [`phantom`]: compartment kinetics and synthetic phantom generation.
//! * [`eval`]: NMSE scoring and multi-realization experiments.
//!
//! File formats, configuration and the command line live in the `slmm`
//! companion crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod baselines;
mod error;
pub mod eval;
pub mod linops;
pub mod matrix;
pub mod model;
pub mod phantom;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use matrix::Mat;
pub use model::{
    cost, cost_terms, cost_terms_unconstrained, forward_model, CostBreakdown, DynamicImage, FactorModel, Hyperparameters,
    ImageGeometry, ProportionMaps, VariabilityMaps,
};
