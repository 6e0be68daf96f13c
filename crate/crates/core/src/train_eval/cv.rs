//! End-to-end cross-validation and fold aggregation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{ModelParams, ModelSpec, Variant};

use super::data::{prepare_cohort, PreprocessConfig, RegionSet};
use super::fit::{train_fold, FoldData, TrainConfig};
use super::folds::{make_folds, FoldSplit};
use super::metrics::{
    classify_region, compute_metrics, roc_points, trapezoid_auc, FoldReport, RegionPrediction,
    RocPoint,
};

/// Cross-validation shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 8, seed: 29 }
    }
}

/// Mean and population standard deviation of one metric over the folds
/// that defined it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    /// Contributing folds; metrics can be undefined on degenerate folds.
    pub folds: usize,
}

impl MetricSummary {
    fn over(values: &[f64]) -> Option<MetricSummary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MetricSummary {
            mean,
            std: var.sqrt(),
            folds: values.len(),
        })
    }
}

/// A fold that could not be trained or evaluated; the rest still aggregate.
#[derive(Clone, Debug, Serialize)]
pub struct RejectedFold {
    pub fold: usize,
    pub reason: String,
}

/// Cross-validation outcome: aggregate rows in Table style (mean ± std per
/// metric), per-fold reports, and the ROC pooled over every evaluated
/// region.
#[derive(Clone, Debug, Serialize)]
pub struct CvReport {
    pub variant: String,
    pub patients: usize,
    pub folds_requested: usize,
    pub accuracy: Option<MetricSummary>,
    pub sensitivity: Option<MetricSummary>,
    pub specificity: Option<MetricSummary>,
    pub f1: Option<MetricSummary>,
    pub auc: Option<MetricSummary>,
    pub pooled_auc: Option<f64>,
    pub folds: Vec<FoldReport>,
    pub rejected: Vec<RejectedFold>,
    pub pooled_roc: Vec<RocPoint>,
}

enum FoldOutcome {
    Report(Box<FoldReport>),
    Rejected(RejectedFold),
}

/// Run the whole protocol on a cohort manifest: prepare every cube, split
/// patients into folds, train and evaluate each fold, aggregate.
///
/// Folds whose training or evaluation fails validation (a missing class,
/// nothing left after gating) are rejected and reported; hard failures
/// abort. Everything downstream of the manifest is a pure function of the
/// configs, so reruns reproduce the report bit for bit.
pub fn run_cv(
    manifest: &Path,
    pre: &PreprocessConfig,
    spec: &ModelSpec,
    train: &TrainConfig,
    cv: &CvConfig,
) -> Result<CvReport> {
    train.validate()?;
    let sets = prepare_cohort(manifest, pre, spec)?;
    let patients = super::data::patients_of(&sets);
    let splits = make_folds(&patients, cv.folds, cv.seed)?;

    let outcomes: Vec<FoldOutcome> = splits
        .par_iter()
        .map(|split| run_fold(split, spec, train, &sets))
        .collect::<Result<_>>()?;

    let mut folds = Vec::new();
    let mut rejected = Vec::new();
    for outcome in outcomes {
        match outcome {
            FoldOutcome::Report(r) => folds.push(*r),
            FoldOutcome::Rejected(r) => rejected.push(r),
        }
    }

    Ok(assemble_report(
        spec.variant,
        patients.len(),
        cv.folds,
        folds,
        rejected,
    ))
}

/// Gather one fold's training sources and validation crops from prepared
/// region sets.
pub fn fold_data<'a>(sets: &'a [RegionSet], split: &FoldSplit) -> FoldData<'a> {
    let mut data = FoldData::default();
    for patient in &split.train {
        for set in sets.iter().filter(|s| &s.patient_id == patient) {
            data.train_sources.extend(set.train.iter());
        }
    }
    for patient in &split.validation {
        for set in sets.iter().filter(|s| &s.patient_id == patient) {
            data.validation.extend(set.eval.iter());
        }
    }
    data
}

/// Classify every region of the split's test patients and reduce to fold
/// metrics. Regions left with no crops after gating are skipped and
/// counted; a test half with nothing evaluable at all fails validation.
pub fn evaluate_fold(
    params: &ModelParams,
    sets: &[RegionSet],
    split: &FoldSplit,
) -> Result<FoldReport> {
    let mut predictions = Vec::new();
    let mut skipped = 0usize;
    for patient in &split.test {
        for set in sets.iter().filter(|s| &s.patient_id == patient) {
            match classify_region(params, &set.eval)? {
                Some((probability, predicted)) => predictions.push(RegionPrediction {
                    patient_id: set.patient_id.clone(),
                    region_id: set.region_id.clone(),
                    label: set.label,
                    probability,
                    predicted,
                    crops: set.eval.len(),
                }),
                None => {
                    skipped += 1;
                    log::warn!(
                        "fold {}: region '{}' has no crops after gating; excluded",
                        split.fold,
                        set.region_id
                    );
                }
            }
        }
    }

    let mut report = compute_metrics(&predictions)?;
    report.fold = split.fold;
    report.test_patients = split.test.clone();
    report.skipped_regions = skipped;
    Ok(report)
}

/// Aggregate fold outcomes: mean ± population std per metric over the
/// folds that defined it, plus the ROC pooled over every evaluated region.
pub fn assemble_report(
    variant: Variant,
    patients: usize,
    folds_requested: usize,
    folds: Vec<FoldReport>,
    rejected: Vec<RejectedFold>,
) -> CvReport {
    let over = |values: Vec<f64>| MetricSummary::over(&values);
    let pooled: Vec<RegionPrediction> = folds
        .iter()
        .flat_map(|f| f.predictions.iter().cloned())
        .collect();
    let pooled_roc = roc_points(&pooled);

    CvReport {
        variant: variant.to_string(),
        patients,
        folds_requested,
        accuracy: over(folds.iter().map(|f| f.accuracy).collect()),
        sensitivity: over(folds.iter().filter_map(|f| f.sensitivity).collect()),
        specificity: over(folds.iter().filter_map(|f| f.specificity).collect()),
        f1: over(folds.iter().filter_map(|f| f.f1).collect()),
        auc: over(folds.iter().filter_map(|f| f.auc).collect()),
        pooled_auc: trapezoid_auc(&pooled_roc),
        folds,
        rejected,
        pooled_roc,
    }
}

fn run_fold(
    split: &FoldSplit,
    spec: &ModelSpec,
    train: &TrainConfig,
    sets: &[RegionSet],
) -> Result<FoldOutcome> {
    let reject = |e: crate::error::Error| {
        log::warn!("fold {} rejected: {e}", split.fold);
        Ok(FoldOutcome::Rejected(RejectedFold {
            fold: split.fold,
            reason: e.to_string(),
        }))
    };

    let data = fold_data(sets, split);
    let trained = match train_fold(split.fold, spec, train, &data) {
        Ok(t) => t,
        Err(e) if e.is_validation() => return reject(e),
        Err(e) => return Err(e),
    };
    log::info!(
        "fold {}: final training loss {:.4}, validation loss {:?}",
        split.fold,
        trained.trace.losses.last().copied().unwrap_or(f64::NAN),
        trained.trace.validation_loss
    );

    match evaluate_fold(&trained.params, sets, split) {
        Ok(report) => Ok(FoldOutcome::Report(Box::new(report))),
        Err(e) if e.is_validation() => reject(e),
        Err(e) => Err(e),
    }
}
