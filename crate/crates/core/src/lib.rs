//! Spectral analysis of high-contrast periodic media with a line defect in 2D:
//! band gaps of the homogenized limit, localized defect modes, fine-scale
//! eigenvalue convergence, and Floquet-Bloch band structure.

pub mod assembly;
pub mod bloch_bands;
pub mod cell_spectral;
pub mod eigensolve;
pub mod error;
pub mod fine_scale;
pub mod geometry;
pub mod limit_defect;
pub mod sparse;
pub mod util;

pub use error::{Error, Result};
