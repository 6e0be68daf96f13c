//! Patch extraction, specular gating, spectral summarization, augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{AnnotatedRegion, Label};

use super::Volume;

/// One spatial crop with full spectral depth, band-major `[bands][size][size]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub data: Vec<f64>,
    pub size: usize,
    pub bands: usize,
    pub label: Label,
    pub region_id: String,
    pub patient_id: String,
    /// Top-left corner of the crop in cube coordinates.
    pub origin: (usize, usize),
}

impl Patch {
    pub fn at(&self, band: usize, r: usize, c: usize) -> f64 {
        self.data[(band * self.size + r) * self.size + c]
    }
}

/// Window geometry for extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchParams {
    /// Network input extent.
    pub size: usize,
    /// Training-source extent, cropped down during augmentation.
    pub source_size: usize,
    /// Raster step between ordered windows.
    pub stride: usize,
}

impl Default for PatchParams {
    fn default() -> Self {
        Self { size: 32, source_size: 36, stride: 16 }
    }
}

impl PatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.stride == 0 {
            return Err(Error::Parameter("patch size and stride must be positive".into()));
        }
        if self.source_size <= self.size {
            return Err(Error::Parameter(format!(
                "source size {} must exceed patch size {} so training crops can jitter",
                self.source_size, self.size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractMode {
    /// Evaluation crops at exactly the network input size.
    Ordered,
    /// Oversized sources that augmentation later crops down.
    Training,
}

/// Raster-scan crops whose footprint lies fully inside the region mask.
///
/// An empty result is not an error: small or ragged regions legitimately
/// admit zero windows and are skipped with a warning.
pub fn extract_patches(
    volume: &Volume,
    region: &AnnotatedRegion,
    patient_id: &str,
    mode: ExtractMode,
    params: &PatchParams,
) -> Result<Vec<Patch>> {
    params.validate()?;
    let (h, w) = (volume.height, volume.width);
    if region.mask.len() != h * w {
        return Err(Error::Shape(format!(
            "mask has {} entries for a {h}x{w} volume",
            region.mask.len()
        )));
    }
    let win = match mode {
        ExtractMode::Ordered => params.size,
        ExtractMode::Training => params.source_size,
    };

    // The raster grid anchors at the mask's bounding box so an exactly
    // window-sized region yields one patch wherever it sits in the frame.
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for r in 0..h {
        for c in 0..w {
            if region.mask[r * w + c] == 1 {
                bounds = Some(match bounds {
                    None => (r, c, r, c),
                    Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                });
            }
        }
    }
    let Some((min_r, min_c, max_r, max_c)) = bounds else {
        log::warn!("region {} has an empty mask", region.region_id);
        return Ok(Vec::new());
    };
    if max_r + 1 - min_r < win || max_c + 1 - min_c < win {
        log::warn!(
            "region {} admits no {win}x{win} windows",
            region.region_id
        );
        return Ok(Vec::new());
    }

    // Integral image of the mask: window is inside iff its sum equals win².
    let mut integral = vec![0u64; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            integral[(r + 1) * (w + 1) + (c + 1)] = u64::from(region.mask[r * w + c])
                + integral[r * (w + 1) + (c + 1)]
                + integral[(r + 1) * (w + 1) + c]
                - integral[r * (w + 1) + c];
        }
    }
    let window_sum = |r: usize, c: usize| {
        integral[(r + win) * (w + 1) + (c + win)] + integral[r * (w + 1) + c]
            - integral[r * (w + 1) + (c + win)]
            - integral[(r + win) * (w + 1) + c]
    };

    let full = (win * win) as u64;
    let mut patches = Vec::new();
    let mut r = min_r;
    while r + win <= max_r + 1 {
        let mut c = min_c;
        while c + win <= max_c + 1 {
            if window_sum(r, c) == full {
                let mut data = Vec::with_capacity(volume.bands * win * win);
                for b in 0..volume.bands {
                    for pr in 0..win {
                        for pc in 0..win {
                            data.push(volume.at(b, r + pr, c + pc));
                        }
                    }
                }
                patches.push(Patch {
                    data,
                    size: win,
                    bands: volume.bands,
                    label: region.label,
                    region_id: region.region_id.clone(),
                    patient_id: patient_id.to_string(),
                    origin: (r, c),
                });
            }
            c += params.stride;
        }
        r += params.stride;
    }
    if patches.is_empty() {
        log::warn!(
            "region {} admits no fully-interior {win}x{win} windows",
            region.region_id
        );
    }
    Ok(patches)
}

/// Specular-reflection rejection thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecularParams {
    /// Intensity (fraction of dynamic range) at which a pixel counts as specular.
    pub threshold: f64,
    /// Largest tolerated fraction of specular pixels.
    pub max_fraction: f64,
}

impl Default for SpecularParams {
    fn default() -> Self {
        Self { threshold: 0.95, max_fraction: 0.02 }
    }
}

impl SpecularParams {
    pub fn new(threshold: f64, max_fraction: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Parameter(format!(
                "specular threshold {threshold} outside (0, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&max_fraction) {
            return Err(Error::Parameter(format!(
                "specular max fraction {max_fraction} outside [0, 1]"
            )));
        }
        Ok(Self { threshold, max_fraction })
    }
}

/// True when the patch passes the gate.
///
/// A pixel is specular when its max-over-bands intensity reaches the
/// threshold; the patch is rejected when the fraction of such pixels
/// strictly exceeds `max_fraction` (exactly at the limit still keeps).
pub fn specular_gate(patch: &Patch, params: &SpecularParams) -> bool {
    let n = patch.size * patch.size;
    let mut specular = 0usize;
    for r in 0..patch.size {
        for c in 0..patch.size {
            let mut peak = f64::NEG_INFINITY;
            for b in 0..patch.bands {
                peak = peak.max(patch.at(b, r, c));
            }
            if peak >= params.threshold {
                specular += 1;
            }
        }
    }
    (specular as f64) / (n as f64) <= params.max_fraction
}

/// Collapse the spectral axis to per-pixel mean and population standard deviation.
pub fn spectral_summary(patch: &Patch) -> Result<Patch> {
    let b = patch.bands;
    if b < 2 {
        return Err(Error::InvalidInput(format!(
            "spectral summary needs at least 2 bands, got {b}"
        )));
    }
    let s = patch.size;
    let mut data = vec![0.0; 2 * s * s];
    for r in 0..s {
        for c in 0..s {
            let mut sum = 0.0;
            for bi in 0..b {
                sum += patch.at(bi, r, c);
            }
            let mean = sum / b as f64;
            let mut sq = 0.0;
            for bi in 0..b {
                let d = patch.at(bi, r, c) - mean;
                sq += d * d;
            }
            data[r * s + c] = mean;
            data[(s + r) * s + c] = (sq / b as f64).sqrt();
        }
    }
    Ok(Patch {
        data,
        size: s,
        bands: 2,
        label: patch.label,
        region_id: patch.region_id.clone(),
        patient_id: patch.patient_id.clone(),
        origin: patch.origin,
    })
}

/// Deterministic crop + flips; the building block under `augment`.
///
/// `flip_h` mirrors columns, `flip_v` mirrors rows; bands stay in order.
pub fn crop_flip(
    source: &Patch,
    size: usize,
    offset: (usize, usize),
    flip_h: bool,
    flip_v: bool,
) -> Result<Patch> {
    if size == 0 || offset.0 + size > source.size || offset.1 + size > source.size {
        return Err(Error::Parameter(format!(
            "crop of {size} at ({}, {}) leaves a {} source",
            offset.0, offset.1, source.size
        )));
    }
    let mut data = Vec::with_capacity(source.bands * size * size);
    for b in 0..source.bands {
        for r in 0..size {
            let sr = offset.0 + if flip_v { size - 1 - r } else { r };
            for c in 0..size {
                let sc = offset.1 + if flip_h { size - 1 - c } else { c };
                data.push(source.at(b, sr, sc));
            }
        }
    }
    Ok(Patch {
        data,
        size,
        bands: source.bands,
        label: source.label,
        region_id: source.region_id.clone(),
        patient_id: source.patient_id.clone(),
        origin: (source.origin.0 + offset.0, source.origin.1 + offset.1),
    })
}

/// Random crop with independent 50% horizontal and vertical flips.
pub fn augment<R: Rng>(source: &Patch, size: usize, rng: &mut R) -> Result<Patch> {
    if source.size <= size {
        return Err(Error::Parameter(format!(
            "augmentation source {} not larger than target {size}",
            source.size
        )));
    }
    let span = source.size - size;
    let offset_r = rng.gen_range(0..=span);
    let offset_c = rng.gen_range(0..=span);
    let flip_h = rng.gen_bool(0.5);
    let flip_v = rng.gen_bool(0.5);
    crop_flip(source, size, (offset_r, offset_c), flip_h, flip_v)
}
