//! Region-level classification and fold metrics, tumor as positive class.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hsi::Label;
use crate::models::{assemble_batch, ModelParams};
use crate::preprocess::Patch;

/// Forward-pass batch size for crop probabilities. Eval passes are
/// per-sample independent, so the grouping cannot change any value.
const EVAL_BATCH: usize = 32;

/// One region's outcome: ground truth, mean tumor probability, decision.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionPrediction {
    pub patient_id: String,
    pub region_id: String,
    pub label: Label,
    pub probability: f64,
    pub predicted: Label,
    pub crops: usize,
}

/// Tumor probability of every crop, in input order.
pub fn crop_probabilities(params: &ModelParams, patches: &[Patch]) -> Result<Vec<f64>> {
    let mut probs = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(EVAL_BATCH) {
        let refs: Vec<&Patch> = chunk.iter().collect();
        let input = assemble_batch(params.spec(), &refs)?;
        for row in params.predict_proba(&input, chunk.len())? {
            probs.push(row[1]);
        }
    }
    Ok(probs)
}

/// Mean probability and 0.5-threshold decision; `None` on an empty slice.
///
/// The mean sums in sorted order, which makes the value exactly invariant
/// to crop permutation instead of merely close.
pub fn region_decision(probs: &[f64]) -> Option<(f64, Label)> {
    if probs.is_empty() {
        return None;
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let label = if mean >= 0.5 { Label::Tumor } else { Label::Healthy };
    Some((mean, label))
}

/// Crop-averaged region classification: the mean of the per-crop tumor
/// probabilities decides the region. `None` marks a region with no
/// surviving crops; the caller logs and excludes it.
pub fn classify_region(params: &ModelParams, patches: &[Patch]) -> Result<Option<(f64, Label)>> {
    if patches.is_empty() {
        return Ok(None);
    }
    let probs = crop_probabilities(params, patches)?;
    Ok(region_decision(&probs))
}

/// One ROC operating point; `threshold: None` is the +inf anchor at (0,0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: Option<f64>,
}

/// Threshold sweep over the sorted scores: one point per distinct score
/// (ties collapse into a single step) plus the (0,0) anchor, ending at
/// (1,1). Empty when either class is absent, since one of the rates would
/// be 0/0.
pub fn roc_points(preds: &[RegionPrediction]) -> Vec<RocPoint> {
    let pos = preds.iter().filter(|p| p.label == Label::Tumor).count();
    let neg = preds.len() - pos;
    if pos == 0 || neg == 0 {
        return Vec::new();
    }
    let mut scored: Vec<(f64, bool)> = preds
        .iter()
        .map(|p| (p.probability, p.label == Label::Tumor))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let score = scored[i].0;
        while i < scored.len() && scored[i].0 == score {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: Some(score),
        });
    }
    points
}

/// Trapezoid area under a monotone ROC; `None` for an empty curve.
pub fn trapezoid_auc(points: &[RocPoint]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut area = 0.0;
    for w in points.windows(2) {
        area += (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0;
    }
    Some(area)
}

/// Region-level results of one fold. Metrics whose denominator is empty are
/// `None`, never coerced to a number.
#[derive(Clone, Debug, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_patients: Vec<String>,
    pub evaluated_regions: usize,
    pub skipped_regions: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub roc: Vec<RocPoint>,
    pub predictions: Vec<RegionPrediction>,
}

/// Confusion counts, point metrics at threshold 0.5, and the ROC sweep.
///
/// Fold index, test patients, and the skipped count are the caller's
/// context and default to empty here.
pub fn compute_metrics(preds: &[RegionPrediction]) -> Result<FoldReport> {
    if preds.is_empty() {
        return Err(Error::Config(
            "no evaluable regions; metrics are undefined".into(),
        ));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for p in preds {
        match (p.label, p.predicted) {
            (Label::Tumor, Label::Tumor) => tp += 1,
            (Label::Tumor, Label::Healthy) => fn_ += 1,
            (Label::Healthy, Label::Tumor) => fp += 1,
            (Label::Healthy, Label::Healthy) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let roc = roc_points(preds);
    Ok(FoldReport {
        fold: 0,
        test_patients: Vec::new(),
        evaluated_regions: preds.len(),
        skipped_regions: 0,
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / preds.len() as f64,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        auc: trapezoid_auc(&roc),
        roc,
        predictions: preds.to_vec(),
    })
}
