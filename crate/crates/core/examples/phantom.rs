//! Generate a synthetic cohort on disk and look at what came out: the
//! manifest, one cube's geometry, and how far apart the two tissue
//! signatures actually are inside the annotated regions.
//!
//! Run with `cargo run --example phantom`.

use hsinet::hsi::{class_mean_spectra, generate_cohort, read_cube, Label, PhantomSpec};
use hsinet::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("hsinet-example-phantom");
    let spec = PhantomSpec {
        height: 48,
        width: 80,
        bands: 8,
        region_size: 36,
        specular_spots: 2,
        seed: 12,
        ..PhantomSpec::default()
    };

    let entries = generate_cohort(&dir, 4, 0.5, &spec)?;
    println!("wrote {} patients under {}", entries.len(), dir.display());
    for entry in &entries {
        let labels: Vec<String> = entry
            .regions
            .iter()
            .map(|r| format!("{}={}", r.id, r.label))
            .collect();
        println!("  {} -> {} [{}]", entry.patient_id, entry.path, labels.join(", "));
    }

    // Half the cohort carries both classes, the rest one region each.
    let first = &entries[0];
    let (cube, regions) = read_cube(dir.join(&first.path))?;
    println!(
        "\n{}: {}x{} pixels, {} bands from {:.0} to {:.0} nm",
        cube.patient_id,
        cube.height,
        cube.width,
        cube.bands,
        cube.wavelengths_nm[0],
        cube.wavelengths_nm[cube.bands - 1]
    );

    for region in &regions {
        let mut mean = vec![0.0f64; cube.bands];
        let mut count = 0usize;
        for r in 0..cube.height {
            for c in 0..cube.width {
                if region.mask[r * cube.width + c] != 0 {
                    for (b, m) in mean.iter_mut().enumerate() {
                        *m += cube.at(b, r, c) as f64;
                    }
                    count += 1;
                }
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let shown: Vec<String> = mean.iter().map(|m| format!("{m:.3}")).collect();
        println!(
            "  region {} ({}, {} px): band means [{}]",
            region.region_id,
            region.label,
            count,
            shown.join(", ")
        );
    }

    // The generator's nominal class signatures, before texture and noise.
    let (healthy, tumor) = class_mean_spectra(&spec);
    let gap: f64 = healthy
        .iter()
        .zip(&tumor)
        .map(|(h, t)| (h - t).abs())
        .fold(0.0, f64::max);
    println!(
        "\nnominal {} vs {} signatures differ by up to {gap:.3} reflectance",
        Label::Healthy,
        Label::Tumor
    );
    Ok(())
}
