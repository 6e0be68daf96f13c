use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::hsi::Label;
use crate::preprocess::Patch;
use crate::tensor::Mode;

use super::*;

fn default_spec(variant: Variant) -> ModelSpec {
    ModelSpec { variant, ..ModelSpec::default() }
}

/// Closed-form parameter count: per block, the layer inputs form an
/// arithmetic progression, so sums collapse without walking layers.
fn analytic_count(spec: &ModelSpec) -> usize {
    let kv: usize = if spec.variant == Variant::Densenet3d { 27 } else { 9 };
    let g = spec.growth_rate;
    let mut total = spec.initial_channels * spec.in_channels() * kv;
    let mut c = spec.initial_channels;
    for (b, &layers) in spec.layers_per_block.iter().enumerate() {
        let cin_sum = layers * c + g * layers * (layers - 1) / 2;
        total += (2 + g * kv) * cin_sum;
        c += layers * g;
        if b < 2 {
            total += 2 * c + (c / 2) * c;
            c /= 2;
        }
    }
    total + 4 * c + 2
}

#[test]
fn default_specs_build_with_analytic_parameter_counts() {
    for variant in [Variant::Densenet2d, Variant::Densenet2dMs, Variant::Densenet3d] {
        let spec = default_spec(variant);
        let params = build(&spec).unwrap();
        assert_eq!(
            params.param_count(),
            analytic_count(&spec),
            "parameter count mismatch for {variant}"
        );
        for (name, t) in params.tensors() {
            assert!(t.values.iter().all(|v| v.is_finite()), "{name} not finite");
        }
    }
}

#[test]
fn variants_fix_their_input_shapes() {
    let spec2d = default_spec(Variant::Densenet2d);
    assert_eq!(spec2d.input_shape(20), vec![20, 30, 32, 32]);
    assert_eq!(spec2d.in_channels(), 30);

    let ms = default_spec(Variant::Densenet2dMs);
    assert_eq!(ms.input_shape(4), vec![4, 2, 32, 32]);

    let spec3d = default_spec(Variant::Densenet3d);
    assert_eq!(spec3d.input_shape(7), vec![7, 1, 30, 32, 32]);
    assert_eq!(spec3d.in_channels(), 1);
}

#[test]
fn batch_of_twenty_yields_twenty_logit_rows() {
    let spec = default_spec(Variant::Densenet2d);
    let mut params = build(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input: Vec<f64> = (0..20 * spec.sample_numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let pass = params.forward(&input, 20, Mode::Train).unwrap();
    assert_eq!(pass.logits.shape(), vec![20, 2]);
    assert!(pass.logits.value().iter().all(|v| v.is_finite()));
}

#[test]
fn duplicated_samples_get_identical_eval_rows() {
    let spec = micro_spec(Variant::Densenet2d);
    let params = build(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let one: Vec<f64> = (0..spec.sample_numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut batch = one.clone();
    batch.extend_from_slice(&one);
    let pass = params.forward_eval(&batch, 2).unwrap();
    let logits = pass.logits.value();
    assert_eq!(logits[0].to_bits(), logits[2].to_bits());
    assert_eq!(logits[1].to_bits(), logits[3].to_bits());
}

#[test]
fn zero_input_reduces_to_the_bias_pathway() {
    let spec = micro_spec(Variant::Densenet3d);
    let mut params = build(&spec).unwrap();
    let (name, bias) = params.tensors_mut().last_mut().unwrap();
    assert_eq!(name, "head.dense.bias");
    bias.values = vec![0.3, -0.2];
    let input = vec![0.0; 3 * spec.sample_numel()];
    let pass = params.forward_eval(&input, 3).unwrap();
    for row in pass.logits.value().chunks_exact(2) {
        assert_eq!(row, [0.3, -0.2]);
    }
}

#[test]
fn eval_forward_is_pure() {
    let spec = micro_spec(Variant::Densenet2dMs);
    let params = build(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let input: Vec<f64> = (0..2 * spec.sample_numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let a = params.forward_eval(&input, 2).unwrap().logits.value();
    let b = params.forward_eval(&input, 2).unwrap().logits.value();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn train_mode_updates_running_statistics_eval_does_not() {
    let spec = micro_spec(Variant::Densenet2d);
    let mut params = build(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let input: Vec<f64> = (0..2 * spec.sample_numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let fresh: Vec<Vec<f64>> = params.stats().iter().map(|(_, s)| s.mean.clone()).collect();

    params.forward_eval(&input, 2).unwrap();
    let after_eval: Vec<Vec<f64>> = params.stats().iter().map(|(_, s)| s.mean.clone()).collect();
    assert_eq!(fresh, after_eval);

    params.forward(&input, 2, Mode::Train).unwrap();
    let after_train: Vec<Vec<f64>> = params.stats().iter().map(|(_, s)| s.mean.clone()).collect();
    assert_ne!(fresh, after_train);
}

#[test]
fn softmax_matches_analytic_values() {
    assert_eq!(softmax_rows(&[0.0, 0.0]), vec![[0.5, 0.5]]);
    let rows = softmax_rows(&[3.0f64.ln(), 0.0]);
    assert!((rows[0][0] - 0.75).abs() < 1e-12);
    assert!((rows[0][1] - 0.25).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let a: f64 = rng.gen_range(-30.0..30.0);
        let b: f64 = rng.gen_range(-30.0..30.0);
        let got = softmax_rows(&[a, b])[0];
        let za = (a - a.max(b)).exp();
        let zb = (b - a.max(b)).exp();
        assert!((got[0] - za / (za + zb)).abs() < 1e-12);
        assert!((got[0] + got[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn predict_proba_rows_sum_to_one() {
    let spec = micro_spec(Variant::Densenet2d);
    let params = build(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let input: Vec<f64> = (0..3 * spec.sample_numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let rows = params.predict_proba(&input, 3).unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        assert!(row[0] > 0.0 && row[1] > 0.0);
    }
}

#[test]
fn build_is_seed_deterministic() {
    let spec = micro_spec(Variant::Densenet2d);
    let a = build(&spec).unwrap();
    let b = build(&spec).unwrap();
    assert_eq!(a.tensors(), b.tensors());
    let other = ModelSpec { seed: 12, ..spec };
    let c = build(&other).unwrap();
    assert_ne!(a.tensors()[0].1.values, c.tensors()[0].1.values);
}

#[test]
fn spec_validation_rejects_degenerate_shapes() {
    let ok = micro_spec(Variant::Densenet2d);
    assert!(ok.validate().is_ok());
    assert!(matches!(
        ModelSpec { num_classes: 3, ..ok.clone() }.validate(),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(
        ModelSpec { patch_size: 2, ..ok.clone() }.validate(),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(
        ModelSpec { layers_per_block: [1, 0, 1], ..ok.clone() }.validate(),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(
        ModelSpec { variant: Variant::Densenet3d, bands: 3, ..ok.clone() }.validate(),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(
        ModelSpec { growth_rate: 0, ..ok }.validate(),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn forward_rejects_misshapen_input() {
    let spec = micro_spec(Variant::Densenet2d);
    let mut params = build(&spec).unwrap();
    let short = vec![0.5; spec.sample_numel() - 1];
    match params.forward(&short, 1, Mode::Eval) {
        Err(Error::Shape(m)) => assert!(m.starts_with("input:"), "unhelpful message {m}"),
        Err(other) => panic!("expected input shape error, got {other:?}"),
        Ok(_) => panic!("expected input shape error, got logits"),
    }
    assert!(matches!(params.forward(&[], 0, Mode::Eval), Err(Error::InvalidInput(_))));
}

fn patch_of(size: usize, bands: usize, fill: f64) -> Patch {
    Patch {
        data: vec![fill; bands * size * size],
        size,
        bands,
        label: Label::Tumor,
        region_id: "r".into(),
        patient_id: "p".into(),
        origin: (0, 0),
    }
}

#[test]
fn batch_assembly_respects_variant_contracts() {
    let spec = micro_spec(Variant::Densenet2d);
    let a = patch_of(8, 4, 0.25);
    let b = patch_of(8, 4, 0.75);
    let batch = assemble_batch(&spec, &[&a, &b]).unwrap();
    assert_eq!(batch.len(), 2 * spec.sample_numel());
    assert!(batch[..a.data.len()].iter().all(|&v| v == 0.25));
    assert!(batch[a.data.len()..].iter().all(|&v| v == 0.75));

    // The MS variant consumes summarized two-band patches.
    let ms = micro_spec(Variant::Densenet2dMs);
    assert!(assemble_batch(&ms, &[&patch_of(8, 2, 0.5)]).is_ok());
    assert!(matches!(assemble_batch(&ms, &[&a]), Err(Error::Shape(_))));

    // Full-spectrum variants reject summarized inputs and wrong extents.
    assert!(matches!(
        assemble_batch(&spec, &[&patch_of(8, 2, 0.5)]),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        assemble_batch(&spec, &[&patch_of(16, 4, 0.5)]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let report = gradcheck_variant(Variant::Densenet2d, 17).unwrap();
    assert!(
        report.pass,
        "{}: max relative error {} over {} points",
        report.name, report.max_rel_error, report.points
    );
    assert!(report.points > 300, "micro spec too small to be meaningful");
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hsim");
    let spec = micro_spec(Variant::Densenet3d);
    let mut params = build(&spec).unwrap();
    // Touch the running statistics so the round trip covers trained state.
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let input: Vec<f64> = (0..2 * spec.sample_numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
    params.forward(&input, 2, Mode::Train).unwrap();

    save_params(&path, &params).unwrap();
    let back = load_params(&path).unwrap();
    assert_eq!(back.spec(), params.spec());
    assert_eq!(back.tensors(), params.tensors());
    for ((an, a), (bn, b)) in back.stats().iter().zip(params.stats()) {
        assert_eq!(an, bn);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.var, b.var);
    }

    let logits_a = params.forward_eval(&input, 2).unwrap().logits.value();
    let logits_b = back.forward_eval(&input, 2).unwrap().logits.value();
    assert_eq!(logits_a, logits_b);
}

#[test]
fn checkpoint_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hsim");
    let params = build(&micro_spec(Variant::Densenet2d)).unwrap();
    save_params(&path, &params).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'Z';
    std::fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(load_params(&path), Err(Error::Format { offset: 0, .. })));

    let mut truncated = good.clone();
    truncated.truncate(good.len() - 5);
    std::fs::write(&path, &truncated).unwrap();
    match load_params(&path) {
        Err(Error::Format { what, .. }) => assert!(what.contains("truncated")),
        other => panic!("expected truncation error, got {other:?}"),
    }

    let mut trailing = good;
    trailing.extend_from_slice(&[0, 0, 0]);
    std::fs::write(&path, &trailing).unwrap();
    match load_params(&path) {
        Err(Error::Format { what, .. }) => assert!(what.contains("trailing")),
        other => panic!("expected trailing-bytes error, got {other:?}"),
    }
}

#[test]
fn checkpoint_layout_must_match_the_embedded_spec() {
    let params = build(&micro_spec(Variant::Densenet2d)).unwrap();
    let spec = params.spec.clone();

    let mut swapped = params.tensors.clone();
    swapped.swap(0, 1);
    let stats = params.stats.clone();
    assert!(matches!(
        ModelParams::from_parts(spec.clone(), swapped, stats.clone()),
        Err(Error::Checkpoint(_))
    ));

    let mut short = params.tensors.clone();
    short.pop();
    assert!(matches!(
        ModelParams::from_parts(spec.clone(), short, stats.clone()),
        Err(Error::Checkpoint(_))
    ));

    let mut reshaped = params.tensors.clone();
    reshaped[0].1.shape = vec![1, 1, 1, 1];
    assert!(matches!(
        ModelParams::from_parts(spec, reshaped, stats),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn golden_checkpoint_hash_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("golden.hsim");
    save_params(&path, &build(&micro_spec(Variant::Densenet2d)).unwrap()).unwrap();
    let digest = Sha256::digest(std::fs::read(&path).unwrap());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(
        hex, "1013f727815df4b5807c5fd0a3f8d7119d986ec033c7fd6f9024a4ed192a1e6f",
        "checkpoint bytes changed; if intentional, refreeze this hash"
    );
}
