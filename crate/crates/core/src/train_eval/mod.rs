//! Training and evaluation protocol: patient-level cross-validation,
//! weighted-loss Adam over augmented patch batches, crop-averaged region
//! classification, and confusion/ROC metrics aggregated across folds.
//!
//! The unit of evaluation is an annotated region, never a single patch:
//! every ordered crop of a region is classified and the mean tumor
//! probability decides the region. Splits are patient-level throughout, so
//! no subject's regions can appear on both sides of a fold.

mod cv;
mod data;
mod fit;
mod folds;
mod metrics;
mod optim;
mod report;


pub use cv::{
    assemble_report, evaluate_fold, fold_data, run_cv, CvConfig, CvReport, MetricSummary,
    RejectedFold,
};
pub use data::{
    patients_of, prepare_cohort, prepare_cube, MnfConfig, NoiseEstimator, PreprocessConfig,
    RegionSet,
};
pub use fit::{train_fold, FoldData, TrainConfig, TrainTrace, TrainedFold, Weighting};
pub use folds::{make_folds, FoldSplit};
pub use metrics::{
    classify_region, compute_metrics, crop_probabilities, region_decision, roc_points,
    trapezoid_auc, FoldReport, RegionPrediction, RocPoint,
};
pub use optim::{adam_step, class_weights, AdamConfig, AdamState};
pub use report::{report_csv, report_json, roc_csv};

/// SplitMix64 finalizer decorrelating per-fold random streams from one base
/// seed while staying a pure function of it.
fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base.wrapping_add(salt.wrapping_add(1).wrapping_mul(0x9E3779B97F4A7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
