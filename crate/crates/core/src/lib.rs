//! Diffeomorphic registration and atlas estimation with multiscale
//! wavelet-parameterized momenta.

pub mod datasets;
pub mod error;
pub mod experiments;
pub mod grid_image;
pub mod geodesic;
pub mod haar;
pub mod metrics;
pub mod objective;
pub mod optimizer;

pub use error::{Error, Result};
pub use grid_image::{RoiBox, ScalarImage, VectorField};
