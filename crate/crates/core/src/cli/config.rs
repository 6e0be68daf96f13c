//! Run configuration: one archivable JSON document per run.
//!
//! Parsing is strict (unknown keys are rejected at every level) and every
//! omitted field takes its default, so the echoed effective config is the
//! complete record of what a run did.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{PhantomSpec, MANIFEST_FILE};
use crate::models::ModelSpec;
use crate::train_eval::{CvConfig, PreprocessConfig, TrainConfig};

/// Everything a run needs. Defaults describe a small phantom experiment
/// that works end to end on a laptop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub cv: CvConfig,
    /// Directory all artifacts are written into.
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            cv: CvConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

/// Where the cohort lives, and optionally how to synthesize it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Cohort directory holding `manifest.jsonl` and one cube per patient,
    /// or the manifest file itself.
    pub path: PathBuf,
    /// Synthetic cohort description; `generate` writes it to `path`. Set to
    /// null when pointing at recorded data.
    pub phantom: Option<PhantomConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: PathBuf::from("data/cohort"),
            phantom: Some(PhantomConfig::default()),
        }
    }
}

/// Synthetic cohort shape for `generate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub patients: usize,
    /// Leading fraction of the cohort annotated with both classes; the
    /// rest carry only their tumor region.
    pub both_fraction: f64,
    pub spec: PhantomSpec,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            patients: 8,
            both_fraction: 1.0,
            spec: PhantomSpec::default(),
        }
    }
}

impl PhantomConfig {
    fn validate(&self) -> Result<()> {
        if self.patients == 0 {
            return Err(Error::Config(
                "dataset.phantom.patients must be at least 1".into(),
            ));
        }
        if !self.both_fraction.is_finite() || !(0.0..=1.0).contains(&self.both_fraction) {
            return Err(Error::Config(format!(
                "dataset.phantom.both_fraction must lie in [0, 1], got {}",
                self.both_fraction
            )));
        }
        Ok(())
    }
}

impl RunConfig {
    /// Parse a config file, or start from defaults when none is given.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    /// Apply command-line overrides. A seed override reseeds every stage so
    /// one flag suffices to fork a whole run.
    pub fn apply(&mut self, out: Option<&Path>, seed: Option<u64>) {
        if let Some(out) = out {
            self.output = out.to_path_buf();
        }
        if let Some(seed) = seed {
            self.model.seed = seed;
            self.train.seed = seed;
            self.cv.seed = seed;
            if let Some(phantom) = &mut self.dataset.phantom {
                phantom.spec.seed = seed;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.cv.folds < 2 {
            return Err(Error::Config(format!(
                "cv.folds must be at least 2, got {}",
                self.cv.folds
            )));
        }
        if let Some(phantom) = &self.dataset.phantom {
            phantom.validate()?;
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::Config("output must name a directory".into()));
        }
        Ok(())
    }

    /// The cohort manifest this config points at.
    pub fn manifest_path(&self) -> PathBuf {
        if self.dataset.path.extension().is_some_and(|e| e == "jsonl") {
            self.dataset.path.clone()
        } else {
            self.dataset.path.join(MANIFEST_FILE)
        }
    }

    /// The materialized document: every default spelled out, stable field
    /// order, trailing newline.
    pub fn effective_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json("effective-config.json", e))?;
        text.push('\n');
        Ok(text)
    }
}
