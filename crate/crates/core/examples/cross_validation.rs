//! The full protocol in one call: patient-level folds, per-fold training
//! and region scoring, and the aggregate report with fold-to-fold spread.
//! Also renders the same report the command-line tool writes to disk.
//!
//! Run with `cargo run --example cross_validation`.

use hsinet::hsi::{generate_cohort, PhantomSpec, MANIFEST_FILE};
use hsinet::models::{ModelSpec, Variant, NUM_CLASSES};
use hsinet::preprocess::PatchParams;
use hsinet::train_eval::{report_csv, run_cv, CvConfig, PreprocessConfig, TrainConfig};
use hsinet::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("hsinet-example-cv");
    let phantom = PhantomSpec {
        height: 44,
        width: 78,
        bands: 4,
        region_size: 36,
        specular_spots: 0,
        seed: 19,
        ..PhantomSpec::default()
    };
    generate_cohort(&dir, 8, 1.0, &phantom)?;

    let pre = PreprocessConfig {
        patch: PatchParams {
            size: 16,
            source_size: 20,
            stride: 8,
        },
        ..PreprocessConfig::default()
    };
    let spec = ModelSpec {
        variant: Variant::Densenet2d,
        bands: 4,
        patch_size: 16,
        initial_channels: 4,
        growth_rate: 2,
        layers_per_block: [1, 1, 1],
        num_classes: NUM_CLASSES,
        seed: 31,
    };
    let train = TrainConfig {
        iterations: 200,
        batch: 12,
        seed: 7,
        ..TrainConfig::default()
    };
    let cv = CvConfig { folds: 2, seed: 3 };

    let report = run_cv(&dir.join(MANIFEST_FILE), &pre, &spec, &train, &cv)?;

    println!(
        "{} on {} patients, {} of {} folds evaluated",
        report.variant,
        report.patients,
        report.folds.len(),
        report.folds_requested
    );
    for fold in &report.folds {
        println!(
            "  fold {}: test {:?}, confusion (tp {}, fp {}, tn {}, fn {}), accuracy {:.3}",
            fold.fold, fold.test_patients, fold.tp, fold.fp, fold.tn, fold.fn_, fold.accuracy
        );
    }
    let show = |name: &str, m: Option<hsinet::train_eval::MetricSummary>| match m {
        Some(m) => println!("  {name}: {:.3} +/- {:.3} over {} folds", m.mean, m.std, m.folds),
        None => println!("  {name}: undefined on every fold"),
    };
    println!("aggregates:");
    show("accuracy", report.accuracy);
    show("sensitivity", report.sensitivity);
    show("specificity", report.specificity);
    show("f1", report.f1);
    show("auc", report.auc);
    if let Some(auc) = report.pooled_auc {
        println!("  pooled auc over all test regions: {auc:.3}");
    }

    println!("\nreport.csv as the CLI would write it:");
    print!("{}", report_csv(&report));
    Ok(())
}
