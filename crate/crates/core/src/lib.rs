//! Circular transformer for subseasonal-to-seasonal forecasting.
//!
//! Gridded weather states are cut into one token per latitude row, mixed by
//! multi-head attention in the Fourier domain of each token embedding, and
//! mapped directly to the weeks 3-4 and weeks 5-6 mean fields.

pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod training;

pub use error::{Error, ErrorKind, Result};
