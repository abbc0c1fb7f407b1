//! Deep Fourier residual training on overlapping box covers.

pub mod adaptivity;
pub mod basis;
pub mod error;
pub mod geometry;
pub mod model;
pub mod optimizer;
pub mod problems;
pub mod quadrature;
pub mod residual;
pub mod vericonst;

pub use error::{DfrError, Result};
