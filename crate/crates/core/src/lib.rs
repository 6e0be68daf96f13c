//! Hyperspectral tissue classification.
//!
//! The crate covers the full pipeline: synthetic hyperspectral cube
//! generation, noise-ordered spectral preprocessing, patch extraction,
//! three densely connected network variants built on a small reverse-mode
//! autodiff core, and patient-level cross-validated evaluation.

pub mod cli;
pub mod error;
pub mod hsi;
pub mod models;
pub mod preprocess;
pub mod tensor;
pub mod train_eval;

pub use error::{Error, Result};
