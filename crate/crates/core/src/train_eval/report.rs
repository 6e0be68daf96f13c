//! Deterministic report rendering: a JSON mirror of `CvReport`, a CSV with
//! one row per fold plus an aggregate row, and the pooled ROC as CSV.
//!
//! Floats print through Rust's shortest round-trip formatting and field
//! order is fixed by the structs, so equal reports render to equal bytes.

use std::fmt::Write;
use std::path::PathBuf;

use crate::error::{Error, Result};

use super::cv::{CvReport, MetricSummary};

/// Pretty-printed JSON plus trailing newline.
pub fn report_json(report: &CvReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Json {
        path: PathBuf::from("CvReport"),
        source: e,
    })?;
    s.push('\n');
    Ok(s)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn agg_cell(m: &Option<MetricSummary>) -> String {
    m.map(|s| format!("{:.4}±{:.4}", s.mean, s.std))
        .unwrap_or_default()
}

/// One row per fold plus an `aggregate` row. Undefined metrics are empty
/// cells; the aggregate row sums the counts and formats each metric as
/// `mean±std` over the folds that defined it.
pub fn report_csv(report: &CvReport) -> String {
    let mut out = String::from(
        "fold,test_patients,evaluated,skipped,tp,fp,tn,fn,accuracy,sensitivity,specificity,f1,auc\n",
    );
    for f in &report.folds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f.fold,
            f.test_patients.len(),
            f.evaluated_regions,
            f.skipped_regions,
            f.tp,
            f.fp,
            f.tn,
            f.fn_,
            f.accuracy,
            opt_cell(f.sensitivity),
            opt_cell(f.specificity),
            opt_cell(f.f1),
            opt_cell(f.auc),
        );
    }
    let sum = |pick: fn(&super::metrics::FoldReport) -> usize| -> usize {
        report.folds.iter().map(pick).sum()
    };
    let _ = writeln!(
        out,
        "aggregate,{},{},{},{},{},{},{},{},{},{},{},{}",
        sum(|f| f.test_patients.len()),
        sum(|f| f.evaluated_regions),
        sum(|f| f.skipped_regions),
        sum(|f| f.tp),
        sum(|f| f.fp),
        sum(|f| f.tn),
        sum(|f| f.fn_),
        agg_cell(&report.accuracy),
        agg_cell(&report.sensitivity),
        agg_cell(&report.specificity),
        agg_cell(&report.f1),
        agg_cell(&report.auc),
    );
    out
}

/// Pooled ROC as `fpr,tpr,threshold`; the (0,0) anchor's threshold prints
/// as `inf`.
pub fn roc_csv(report: &CvReport) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in &report.pooled_roc {
        let threshold = p
            .threshold
            .map(|t| t.to_string())
            .unwrap_or_else(|| "inf".into());
        let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, threshold);
    }
    out
}
