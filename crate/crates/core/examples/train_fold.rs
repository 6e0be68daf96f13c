//! Train one cross-validation fold end to end: cut a cohort into
//! patient-level splits, fit the model on the training patients' augmented
//! patches, then score the held-out test patients region by region.
//!
//! Run with `cargo run --example train_fold`.

use hsinet::hsi::{generate_cohort, PhantomSpec, MANIFEST_FILE};
use hsinet::models::{ModelSpec, Variant, NUM_CLASSES};
use hsinet::preprocess::PatchParams;
use hsinet::train_eval::{
    evaluate_fold, fold_data, make_folds, patients_of, prepare_cohort, train_fold,
    PreprocessConfig, TrainConfig,
};
use hsinet::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("hsinet-example-train-fold");
    let phantom = PhantomSpec {
        height: 44,
        width: 78,
        bands: 4,
        region_size: 36,
        specular_spots: 0,
        seed: 60,
        ..PhantomSpec::default()
    };
    generate_cohort(&dir, 6, 1.0, &phantom)?;

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
        seed: 8,
    };

    let sets = prepare_cohort(&dir.join(MANIFEST_FILE), &pre, &spec)?;
    let patients = patients_of(&sets);
    let splits = make_folds(&patients, 2, 41)?;
    let split = &splits[0];
    println!(
        "fold {}: train {:?}, validation {:?}, test {:?}",
        split.fold, split.train, split.validation, split.test
    );

    let data = fold_data(&sets, split);
    println!(
        "{} training sources, {} validation crops",
        data.train_sources.len(),
        data.validation.len()
    );

    let train = TrainConfig {
        iterations: 60,
        batch: 12,
        seed: 23,
        ..TrainConfig::default()
    };
    let trained = train_fold(split.fold, &spec, &train, &data)?;
    let losses = &trained.trace.losses;
    println!(
        "class weights (healthy, tumor) = ({:.3}, {:.3})",
        trained.trace.class_weights[0], trained.trace.class_weights[1]
    );
    for step in (0..losses.len()).step_by(10) {
        println!("  step {step:3}: weighted loss {:.4}", losses[step]);
    }
    if let Some(v) = trained.trace.validation_loss {
        println!("validation loss after training: {v:.4}");
    }

    let report = evaluate_fold(&trained.params, &sets, split)?;
    println!(
        "\ntest regions: {} evaluated, {} skipped",
        report.evaluated_regions, report.skipped_regions
    );
    for p in &report.predictions {
        println!(
            "  {}/{}: true {}, mean tumor probability {:.3} over {} crops -> {}",
            p.patient_id, p.region_id, p.label, p.probability, p.crops, p.predicted
        );
    }
    println!(
        "accuracy {:.3}, sensitivity {}",
        report.accuracy,
        report
            .sensitivity
            .map_or("undefined".into(), |s| format!("{s:.3}"))
    );
    Ok(())
}
