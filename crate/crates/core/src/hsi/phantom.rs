//! Synthetic laryngeal phantoms: two-class tissue spectra on a noisy frame.
//!
//! A phantom frame is background tissue carrying the healthy spectrum, with
//! one annotated healthy window and one disjoint tumor window. Per-pixel
//! spectra are a smooth reflectance baseline minus Gaussian absorption bumps;
//! the tumor signature is the healthy one with its bump parameters pulled
//! toward a deviant set by the `separation` factor, so separation 0 collapses
//! the classes. On top sit broadband per-pixel texture, a smooth
//! illumination ramp, per-voxel sensor noise, and saturated specular spots.
//!
//! Everything is a pure function of the spec: one ChaCha stream, drawn in a
//! fixed order (texture field, then voxel noise band-major, then spots).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::manifest::{write_manifest, ManifestEntry, ManifestRegion, MANIFEST_FILE};
use super::{default_wavelengths, write_cube, AnnotatedRegion, HyperspectralCube, Label};

/// Gaussian absorption features of one tissue class, in normalized band
/// coordinate `t in [0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorptionBumps {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub depths: Vec<f64>,
}

impl AbsorptionBumps {
    fn healthy_default() -> Self {
        AbsorptionBumps {
            centers: vec![0.25, 0.55],
            widths: vec![0.08, 0.12],
            depths: vec![0.18, 0.12],
        }
    }

    fn tumor_default() -> Self {
        AbsorptionBumps {
            centers: vec![0.35, 0.62],
            widths: vec![0.10, 0.10],
            depths: vec![0.24, 0.10],
        }
    }
}

/// Full description of one synthetic acquisition; the seed fixes every byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// 0 collapses the two classes; 1 is the nominal tumor signature.
    pub separation: f64,
    /// Std of the broadband per-pixel reflectance texture.
    pub texture_scale: f64,
    /// Std of per-voxel sensor noise.
    pub noise_sigma: f64,
    /// Extra per-band noise std, added to `noise_sigma` band-wise; shorter
    /// lists leave the remaining bands unchanged.
    pub band_noise_sigma: Vec<f64>,
    pub specular_spots: usize,
    /// Intensity written into spot pixels; at least 0.98 of dynamic range.
    pub specular_intensity: f64,
    /// Peak relative attenuation of the corner-to-corner illumination ramp.
    pub illumination_amplitude: f64,
    /// Side length of the two square annotated regions.
    pub region_size: usize,
    pub healthy_bumps: AbsorptionBumps,
    pub tumor_bumps: AbsorptionBumps,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            height: 256,
            width: 256,
            bands: 30,
            separation: 1.0,
            texture_scale: 0.02,
            noise_sigma: 0.05,
            band_noise_sigma: Vec::new(),
            specular_spots: 3,
            specular_intensity: 0.99,
            illumination_amplitude: 0.1,
            region_size: 96,
            healthy_bumps: AbsorptionBumps::healthy_default(),
            tumor_bumps: AbsorptionBumps::tumor_default(),
            seed: 7,
        }
    }
}

/// Placement of the two annotated squares: vertically centered, split left
/// and right with equal margins.
struct Rects {
    top: usize,
    healthy_left: usize,
    tumor_left: usize,
    size: usize,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            return Err(Error::Parameter("phantom needs at least one band".into()));
        }
        if self.separation.is_nan() || self.separation < 0.0 {
            return Err(Error::Parameter(format!(
                "separation must be >= 0, got {}",
                self.separation
            )));
        }
        for (name, v) in [
            ("texture_scale", self.texture_scale),
            ("noise_sigma", self.noise_sigma),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.band_noise_sigma.len() > self.bands {
            return Err(Error::Parameter(format!(
                "{} band noise entries for {} bands",
                self.band_noise_sigma.len(),
                self.bands
            )));
        }
        if self.band_noise_sigma.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Parameter("band noise sigma entries must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.illumination_amplitude) {
            return Err(Error::Parameter(format!(
                "illumination amplitude must be in [0,1), got {}",
                self.illumination_amplitude
            )));
        }
        if self.specular_spots > 0 && !(0.98..=1.0).contains(&self.specular_intensity) {
            return Err(Error::Parameter(format!(
                "specular intensity must be in [0.98,1], got {}",
                self.specular_intensity
            )));
        }
        let b = [&self.healthy_bumps, &self.tumor_bumps];
        let k = b[0].centers.len();
        for bumps in b {
            if bumps.widths.len() != bumps.centers.len() || bumps.depths.len() != bumps.centers.len()
            {
                return Err(Error::Parameter(
                    "bump centers/widths/depths must have equal length".into(),
                ));
            }
            if bumps.centers.len() != k {
                return Err(Error::Parameter(
                    "healthy and tumor bump counts must match for interpolation".into(),
                ));
            }
            if bumps.widths.iter().any(|w| w.is_nan() || *w <= 0.0) {
                return Err(Error::Parameter("bump widths must be positive".into()));
            }
        }
        self.rects().map(|_| ())
    }

    fn rects(&self) -> Result<Rects> {
        let rs = self.region_size;
        if rs < 32 {
            return Err(Error::Parameter(format!(
                "region size {rs} cannot contain a 32x32 window"
            )));
        }
        if self.height < rs || self.width < 2 * rs + 3 {
            return Err(Error::Parameter(format!(
                "cube {}x{} cannot hold two disjoint {rs}x{rs} regions",
                self.height, self.width
            )));
        }
        let margin = (self.width - 2 * rs) / 3;
        Ok(Rects {
            top: (self.height - rs) / 2,
            healthy_left: margin,
            tumor_left: self.width - margin - rs,
            size: rs,
        })
    }
}

fn spectrum_from_bumps(bands: usize, bumps: &AbsorptionBumps) -> Vec<f64> {
    (0..bands)
        .map(|bi| {
            let t = if bands > 1 { bi as f64 / (bands - 1) as f64 } else { 0.0 };
            let mut v = 0.5 + 0.3 * t;
            for i in 0..bumps.centers.len() {
                let z = (t - bumps.centers[i]) / bumps.widths[i];
                v -= bumps.depths[i] * (-0.5 * z * z).exp();
            }
            v.clamp(0.02, 1.0)
        })
        .collect()
}

/// Mean spectra of the two classes under a spec, before texture, noise, and
/// illumination: `(healthy, tumor)`. The tumor signature uses bump
/// parameters interpolated from healthy by `separation`.
pub fn class_mean_spectra(spec: &PhantomSpec) -> (Vec<f64>, Vec<f64>) {
    let s = spec.separation;
    let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
    };
    let tumor = AbsorptionBumps {
        centers: lerp(&spec.healthy_bumps.centers, &spec.tumor_bumps.centers),
        widths: lerp(&spec.healthy_bumps.widths, &spec.tumor_bumps.widths),
        depths: lerp(&spec.healthy_bumps.depths, &spec.tumor_bumps.depths),
    };
    (
        spectrum_from_bumps(spec.bands, &spec.healthy_bumps),
        spectrum_from_bumps(spec.bands, &tumor),
    )
}

pub(super) fn generate_named(
    spec: &PhantomSpec,
    patient_id: &str,
) -> Result<(HyperspectralCube, Vec<AnnotatedRegion>)> {
    spec.validate()?;
    let rects = spec.rects()?;
    let (h, w, b) = (spec.height, spec.width, spec.bands);
    let (mu_h, mu_t) = class_mean_spectra(spec);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Draw 1: broadband texture field, row-major.
    let texture: Vec<f64> = (0..h * w)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * spec.texture_scale)
        .collect();

    let in_tumor = |r: usize, c: usize| {
        r >= rects.top
            && r < rects.top + rects.size
            && c >= rects.tumor_left
            && c < rects.tumor_left + rects.size
    };
    let illum = |r: usize, c: usize| {
        let tr = r as f64 / (h - 1).max(1) as f64;
        let tc = c as f64 / (w - 1).max(1) as f64;
        1.0 - spec.illumination_amplitude * 0.5 * (tr + tc)
    };

    // Draw 2: per-voxel sensor noise, band-major like the data layout.
    let mut data = vec![0.0f64; b * h * w];
    for bi in 0..b {
        let sigma = spec.noise_sigma + spec.band_noise_sigma.get(bi).copied().unwrap_or(0.0);
        for r in 0..h {
            for c in 0..w {
                let mu = if in_tumor(r, c) { mu_t[bi] } else { mu_h[bi] };
                let noise: f64 = rng.sample(StandardNormal);
                data[(bi * h + r) * w + c] = illum(r, c) * (mu + texture[r * w + c]) + sigma * noise;
            }
        }
    }

    // Draw 3: specular spots saturate every band within their radius.
    for _ in 0..spec.specular_spots {
        let sr = rng.gen_range(0..h);
        let sc = rng.gen_range(0..w);
        let radius = rng.gen_range(2..=5usize);
        let r2 = (radius * radius) as isize;
        for r in sr.saturating_sub(radius)..(sr + radius + 1).min(h) {
            for c in sc.saturating_sub(radius)..(sc + radius + 1).min(w) {
                let dr = r as isize - sr as isize;
                let dc = c as isize - sc as isize;
                if dr * dr + dc * dc <= r2 {
                    for bi in 0..b {
                        data[(bi * h + r) * w + c] = spec.specular_intensity;
                    }
                }
            }
        }
    }

    let data: Vec<f32> = data.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    let cube = HyperspectralCube::new(
        h,
        w,
        b,
        default_wavelengths(b),
        data,
        patient_id.to_string(),
    )?;
    let healthy = AnnotatedRegion::rect(
        h,
        w,
        rects.top,
        rects.healthy_left,
        rects.size,
        rects.size,
        Label::Healthy,
        format!("{patient_id}-healthy"),
    )?;
    let tumor = AnnotatedRegion::rect(
        h,
        w,
        rects.top,
        rects.tumor_left,
        rects.size,
        rects.size,
        Label::Tumor,
        format!("{patient_id}-tumor"),
    )?;
    Ok((cube, vec![healthy, tumor]))
}

/// Generate one phantom acquisition: the cube plus its healthy and tumor
/// annotations, in that order.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(HyperspectralCube, Vec<AnnotatedRegion>)> {
    generate_named(spec, &format!("phantom-{:016x}", spec.seed))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Per-patient seed: decorrelates patients while staying a pure function of
/// the cohort seed.
pub(crate) fn patient_seed(cohort_seed: u64, index: usize) -> u64 {
    splitmix64(cohort_seed ^ splitmix64(index as u64 + 1))
}

/// Write a cohort of phantom cubes plus a JSONL manifest into `out_dir`.
///
/// The first `round(frac_both * n)` patients keep both annotations; the rest
/// keep only the tumor one, mirroring the marked-area protocol. Returns the
/// manifest entries; the manifest file itself is `manifest.jsonl`.
pub fn generate_cohort(
    out_dir: impl AsRef<Path>,
    n_patients: usize,
    frac_both: f64,
    base: &PhantomSpec,
) -> Result<Vec<ManifestEntry>> {
    let out_dir = out_dir.as_ref();
    if n_patients == 0 {
        return Err(Error::Parameter("cohort needs at least one patient".into()));
    }
    if !(0.0..=1.0).contains(&frac_both) {
        return Err(Error::Parameter(format!(
            "frac_both must be in [0,1], got {frac_both}"
        )));
    }
    base.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let n_both = (frac_both * n_patients as f64).round() as usize;
    let mut entries = Vec::with_capacity(n_patients);
    for i in 0..n_patients {
        let patient_id = format!("P{:03}", i + 1);
        let mut spec = base.clone();
        spec.seed = patient_seed(base.seed, i);
        let (cube, mut regions) = generate_named(&spec, &patient_id)?;
        if i >= n_both {
            regions.retain(|r| r.label == Label::Tumor);
        }
        let file_name = format!("{patient_id}.hsic");
        write_cube(out_dir.join(&file_name), &cube, &regions)?;
        entries.push(ManifestEntry {
            path: file_name,
            patient_id,
            regions: regions
                .iter()
                .map(|r| ManifestRegion {
                    id: r.region_id.clone(),
                    label: r.label,
                })
                .collect(),
        });
    }
    write_manifest(out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}
