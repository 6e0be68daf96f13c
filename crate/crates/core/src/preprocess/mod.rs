//! Acquisition-to-network preprocessing: band alignment, MNF denoising,
//! patch extraction, specular gating, spectral summarization, augmentation.
//!
//! All numeric work happens on [`Volume`], an f64 copy of the stored f32
//! cube: the MNF reconstruction identity is tighter than f32 quantization
//! allows, and training consumes f64 tensors anyway.

mod align;
mod cache;
mod mnf;
mod patches;

#[cfg(test)]
mod tests;

pub use align::{align_bands, Alignment};
pub use cache::{read_patches, write_patches};
pub use mnf::{apply_mnf, fit_mnf, MnfModel};
pub use patches::{
    augment, crop_flip, extract_patches, spectral_summary, specular_gate, ExtractMode, Patch,
    PatchParams, SpecularParams,
};

use crate::error::{Error, Result};
use crate::hsi::HyperspectralCube;

/// Band-major f64 working volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// `data[(b*height + r)*width + c]`.
    pub data: Vec<f64>,
}

impl Volume {
    pub fn from_cube(cube: &HyperspectralCube) -> Self {
        Volume {
            height: cube.height,
            width: cube.width,
            bands: cube.bands,
            data: cube.data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * bands {
            return Err(Error::InvalidInput(format!(
                "volume data length {} does not match {height}x{width}x{bands}",
                data.len()
            )));
        }
        Ok(Volume { height, width, bands, data })
    }

    #[inline]
    pub fn at(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[(band * self.height + row) * self.width + col]
    }

    pub fn plane(&self, band: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[band * n..(band + 1) * n]
    }

    pub fn plane_mut(&mut self, band: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[band * n..(band + 1) * n]
    }

    /// Spectrum of one pixel across bands.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.at(b, row, col)).collect()
    }
}
