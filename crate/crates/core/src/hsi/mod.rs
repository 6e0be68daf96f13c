//! Hyperspectral cube container, annotations, and synthetic phantom data.
//!
//! Cubes hold band-major f32 volumes normalized to `[0,1]` together with
//! per-band wavelengths and a patient id. Annotated regions are binary masks
//! over the cube's spatial extent, at most one tumor and one healthy region
//! per cube. The phantom generator stands in for clinical acquisitions.

mod format;
mod manifest;
mod phantom;


pub(crate) use format::{write_f64_block, Cursor};
pub use format::{read_cube, write_cube};
pub use manifest::{read_manifest, write_manifest, ManifestEntry, ManifestRegion, MANIFEST_FILE};
pub use phantom::{class_mean_spectra, generate_cohort, generate_phantom, AbsorptionBumps, PhantomSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tissue class of an annotated region. The tumor class is "positive"
/// throughout the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Tumor,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Healthy => "healthy",
            Label::Tumor => "tumor",
        })
    }
}

impl Label {
    pub fn as_byte(self) -> u8 {
        match self {
            Label::Healthy => 0,
            Label::Tumor => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Label> {
        match b {
            0 => Some(Label::Healthy),
            1 => Some(Label::Tumor),
            _ => None,
        }
    }

    /// Class index used for loss labels and confusion counts.
    pub fn index(self) -> usize {
        self.as_byte() as usize
    }
}

/// H×W×B radiance volume, band-major planes, row-major within a plane.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperspectralCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Strictly ascending, one entry per band.
    pub wavelengths_nm: Vec<f32>,
    /// `data[(b*height + r)*width + c]`, every value finite and >= 0.
    pub data: Vec<f32>,
    pub patient_id: String,
}

/// Default acquisition grid: 30 bands, 380 nm to 670 nm in 10 nm steps.
pub fn default_wavelengths(bands: usize) -> Vec<f32> {
    (0..bands).map(|i| 380.0 + 10.0 * i as f32).collect()
}

impl HyperspectralCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        wavelengths_nm: Vec<f32>,
        data: Vec<f32>,
        patient_id: String,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::InvalidInput(format!(
                "cube extents must be positive, got {height}x{width}x{bands}"
            )));
        }
        if wavelengths_nm.len() != bands {
            return Err(Error::InvalidInput(format!(
                "{} wavelengths for {bands} bands",
                wavelengths_nm.len()
            )));
        }
        if !wavelengths_nm.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "wavelengths must be strictly ascending".into(),
            ));
        }
        if data.len() != height * width * bands {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match {height}x{width}x{bands}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "intensity at flat index {i} is {}, expected finite and >= 0",
                data[i]
            )));
        }
        Ok(HyperspectralCube {
            height,
            width,
            bands,
            wavelengths_nm,
            data,
            patient_id,
        })
    }

    #[inline]
    pub fn at(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height + row) * self.width + col]
    }

    /// One full wavelength plane.
    pub fn band_plane(&self, band: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[band * n..(band + 1) * n]
    }

    /// Spectrum of a single pixel across all bands.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.at(b, row, col)).collect()
    }
}

/// Binary mask with a tissue label over a cube's spatial extent.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedRegion {
    /// H×W plane of 0/1 bytes, row-major.
    pub mask: Vec<u8>,
    pub label: Label,
    pub region_id: String,
}

impl AnnotatedRegion {
    pub fn new(mask: Vec<u8>, label: Label, region_id: String) -> Result<Self> {
        if let Some(i) = mask.iter().position(|&m| m > 1) {
            return Err(Error::InvalidInput(format!(
                "mask byte at index {i} is {}, expected 0 or 1",
                mask[i]
            )));
        }
        if !mask.contains(&1) {
            return Err(Error::InvalidInput(format!("region '{region_id}' has an empty mask")));
        }
        Ok(AnnotatedRegion { mask, label, region_id })
    }

    /// Axis-aligned rectangular mask inside an H×W frame.
    #[allow(clippy::too_many_arguments)]
    pub fn rect(
        height: usize,
        width: usize,
        top: usize,
        left: usize,
        rows: usize,
        cols: usize,
        label: Label,
        region_id: String,
    ) -> Result<Self> {
        if top + rows > height || left + cols > width || rows == 0 || cols == 0 {
            return Err(Error::Parameter(format!(
                "region rectangle {rows}x{cols} at ({top},{left}) exceeds {height}x{width} frame"
            )));
        }
        let mut mask = vec![0u8; height * width];
        for r in top..top + rows {
            mask[r * width + left..r * width + left + cols].fill(1);
        }
        AnnotatedRegion::new(mask, label, region_id)
    }

    pub fn pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Check regions against a cube: mask extent, at most one region per class.
pub fn validate_regions(cube: &HyperspectralCube, regions: &[AnnotatedRegion]) -> Result<()> {
    let mut seen = [0usize; 2];
    for region in regions {
        if region.mask.len() != cube.height * cube.width {
            return Err(Error::InvalidInput(format!(
                "region '{}' mask length {} does not match {}x{} cube",
                region.region_id,
                region.mask.len(),
                cube.height,
                cube.width
            )));
        }
        seen[region.label.index()] += 1;
    }
    if seen[0] > 1 || seen[1] > 1 {
        return Err(Error::InvalidInput(format!(
            "at most one region per class allowed, got {} healthy and {} tumor",
            seen[0], seen[1]
        )));
    }
    Ok(())
}
