//! The three architectures side by side: how each one sees a patch, what
//! it costs in parameters, and that every variant's gradients check out at
//! micro scale.
//!
//! Run with `cargo run --example variants`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hsinet::models::{build, gradcheck_variant, micro_spec, ModelSpec, Variant, NUM_CLASSES};
use hsinet::Result;

fn main() -> Result<()> {
    let variants = [Variant::Densenet2d, Variant::Densenet2dMs, Variant::Densenet3d];

    for variant in variants {
        let spec = ModelSpec {
            variant,
            bands: 6,
            patch_size: 16,
            initial_channels: 8,
            growth_rate: 4,
            layers_per_block: [2, 2, 2],
            num_classes: NUM_CLASSES,
            seed: 5,
        };
        let params = build(&spec)?;
        let parameter_count: usize = params.tensors().iter().map(|(_, t)| t.values.len()).sum();

        // The MS variant consumes the two-band spectral summary; the others
        // see every band, as planes (2D) or as a depth axis (3D).
        let bands = spec.patch_bands();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let batch: Vec<f64> = (0..2 * bands * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let probs = params.predict_proba(&batch, 2)?;

        println!("{variant}");
        println!("  input: {bands} band(s) of 16x16, {parameter_count} trainable parameters");
        println!(
            "  untrained tumor probabilities on two random patches: {:.3}, {:.3}",
            probs[0][1], probs[1][1]
        );

        let report = gradcheck_variant(variant, 123)?;
        println!(
            "  gradcheck at micro spec {:?}: {} points, max relative error {:.2e} ({})",
            {
                let m = micro_spec(variant);
                (m.bands, m.patch_size)
            },
            report.points,
            report.max_rel_error,
            if report.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(())
}
