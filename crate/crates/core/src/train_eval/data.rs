//! Cube-to-patch preparation shared by training and evaluation.
//!
//! One pass per cube: optional band alignment, MNF denoising (fitted per
//! cube, reconstructed from the top components), raster extraction of both
//! the ordered evaluation grid and the oversized training sources, and
//! specular gating of every crop. For the spectral-summary variant the
//! evaluation crops are collapsed to 2 bands here; training sources stay
//! spectral and are summarized after augmentation, which changes nothing
//! because the per-pixel summary commutes with crops and flips.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{
    read_cube, read_manifest, validate_regions, AnnotatedRegion, HyperspectralCube, Label,
};
use crate::models::{ModelSpec, Variant};
use crate::preprocess::{
    align_bands, apply_mnf, extract_patches, fit_mnf, spectral_summary, specular_gate,
    ExtractMode, Patch, PatchParams, SpecularParams, Volume,
};

/// Noise-covariance estimator for MNF. Horizontal neighbor differences are
/// the only implemented choice; the key exists so configs say it out loud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseEstimator {
    NeighborDiff,
}

/// MNF stage settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnfConfig {
    pub estimator: NoiseEstimator,
    /// Components kept for reconstruction; `None` keeps every component the
    /// fitted model ranks above the SNR threshold.
    pub components: Option<usize>,
}

impl Default for MnfConfig {
    fn default() -> Self {
        MnfConfig {
            estimator: NoiseEstimator::NeighborDiff,
            components: None,
        }
    }
}

/// Pipeline switches applied to every cube before patches are cut.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Cross-correlation band alignment before anything else; off by
    /// default since still scenes have nothing to align.
    pub align: bool,
    pub mnf: MnfConfig,
    pub specular: SpecularParams,
    pub patch: PatchParams,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            align: false,
            mnf: MnfConfig::default(),
            specular: SpecularParams::default(),
            patch: PatchParams::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        SpecularParams::new(self.specular.threshold, self.specular.max_fraction)?;
        if self.mnf.components == Some(0) {
            return Err(Error::Config(
                "preprocess.mnf.components must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Prepared patches of one annotated region.
#[derive(Clone, Debug)]
pub struct RegionSet {
    pub patient_id: String,
    pub region_id: String,
    pub label: Label,
    /// Ordered evaluation crops, gated, network-ready.
    pub eval: Vec<Patch>,
    /// Oversized spectral training sources, gated.
    pub train: Vec<Patch>,
    /// Crops the specular gate removed, `(eval, train)`.
    pub gated: (usize, usize),
}

/// Run the preprocessing pipeline on one cube and cut patches per region.
pub fn prepare_cube(
    cube: &HyperspectralCube,
    regions: &[AnnotatedRegion],
    cfg: &PreprocessConfig,
    spec: &ModelSpec,
) -> Result<Vec<RegionSet>> {
    cfg.validate()?;
    spec.validate()?;
    validate_regions(cube, regions)?;
    if spec.bands != cube.bands {
        return Err(Error::Config(format!(
            "model.bands = {} but cube '{}' has {} bands",
            spec.bands, cube.patient_id, cube.bands
        )));
    }
    if spec.patch_size != cfg.patch.size {
        return Err(Error::Config(format!(
            "preprocess.patch.size = {} does not match model.patch_size = {}",
            cfg.patch.size, spec.patch_size
        )));
    }

    let mut volume = Volume::from_cube(cube);
    if cfg.align {
        volume = align_bands(&volume)?.volume;
    }
    let mnf = fit_mnf(&volume)?;
    let k = cfg.mnf.components.unwrap_or(mnf.retained_components);
    let volume = apply_mnf(&volume, &mnf, k)?;

    let mut sets = Vec::with_capacity(regions.len());
    for region in regions {
        let ordered = extract_patches(
            &volume,
            region,
            &cube.patient_id,
            ExtractMode::Ordered,
            &cfg.patch,
        )?;
        let sources = extract_patches(
            &volume,
            region,
            &cube.patient_id,
            ExtractMode::Training,
            &cfg.patch,
        )?;
        let (eval_total, train_total) = (ordered.len(), sources.len());
        let mut eval: Vec<Patch> = ordered
            .into_iter()
            .filter(|p| specular_gate(p, &cfg.specular))
            .collect();
        let train: Vec<Patch> = sources
            .into_iter()
            .filter(|p| specular_gate(p, &cfg.specular))
            .collect();
        let gated = (eval_total - eval.len(), train_total - train.len());
        if spec.variant == Variant::Densenet2dMs {
            eval = eval.iter().map(spectral_summary).collect::<Result<_>>()?;
        }
        sets.push(RegionSet {
            patient_id: cube.patient_id.clone(),
            region_id: region.region_id.clone(),
            label: region.label,
            eval,
            train,
            gated,
        });
    }
    Ok(sets)
}

/// Prepare every cube listed in a cohort manifest, in manifest order.
///
/// Cube paths resolve relative to the manifest's directory. Patient ids
/// must be unique, and each cube's embedded annotations must agree with its
/// manifest entry.
pub fn prepare_cohort(
    manifest: &Path,
    cfg: &PreprocessConfig,
    spec: &ModelSpec,
) -> Result<Vec<RegionSet>> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "manifest {} lists no patients",
            manifest.display()
        )));
    }
    let mut seen = HashSet::new();
    for entry in &entries {
        if !seen.insert(entry.patient_id.as_str()) {
            return Err(Error::Config(format!(
                "duplicate patient id '{}' in manifest",
                entry.patient_id
            )));
        }
    }
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));

    let per_patient: Vec<Vec<RegionSet>> = entries
        .par_iter()
        .map(|entry| {
            let (cube, regions) = read_cube(dir.join(&entry.path))?;
            if cube.patient_id != entry.patient_id {
                return Err(Error::Config(format!(
                    "manifest says patient '{}' but {} holds '{}'",
                    entry.patient_id, entry.path, cube.patient_id
                )));
            }
            let in_cube: Vec<(&str, Label)> = regions
                .iter()
                .map(|r| (r.region_id.as_str(), r.label))
                .collect();
            let in_manifest: Vec<(&str, Label)> = entry
                .regions
                .iter()
                .map(|r| (r.id.as_str(), r.label))
                .collect();
            if in_cube != in_manifest {
                return Err(Error::Config(format!(
                    "annotations in {} do not match its manifest entry",
                    entry.path
                )));
            }
            prepare_cube(&cube, &regions, cfg, spec)
        })
        .collect::<Result<_>>()?;
    Ok(per_patient.into_iter().flatten().collect())
}

/// Distinct patients in cohort order.
pub fn patients_of(sets: &[RegionSet]) -> Vec<String> {
    let mut patients: Vec<String> = Vec::new();
    for set in sets {
        if patients.last() != Some(&set.patient_id) {
            patients.push(set.patient_id.clone());
        }
    }
    patients
}
