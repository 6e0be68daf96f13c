use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::hsi::{AnnotatedRegion, Label};

use super::*;

fn vol(h: usize, w: usize, b: usize, f: impl Fn(usize, usize, usize) -> f64) -> Volume {
    let mut data = vec![0.0; h * w * b];
    for bi in 0..b {
        for r in 0..h {
            for c in 0..w {
                data[(bi * h + r) * w + c] = f(bi, r, c);
            }
        }
    }
    Volume::new(h, w, b, data).unwrap()
}

fn noise_vol(h: usize, w: usize, b: usize, sigma: f64, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * b)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect();
    Volume::new(h, w, b, data).unwrap()
}

// ---------------------------------------------------------------- alignment

#[test]
fn aligned_volume_is_a_fixed_point() {
    let v = vol(24, 24, 3, |b, r, c| {
        (0.3 + 0.1 * b as f64) + 0.2 * ((r as f64 * 0.7).sin() + (c as f64 * 0.5).cos())
    });
    let out = align_bands(&v).unwrap();
    assert_eq!(out.shifts, vec![(0, 0); 3]);
    assert!(out.skipped.is_empty());
    assert_eq!(out.volume.data, v.data);
}

#[test]
fn synthetic_shift_is_recovered() {
    let pattern = |r: usize, c: usize| {
        (r as f64 * 0.43).sin() + (c as f64 * 0.31).cos() + 0.01 * (r * c) as f64
    };
    let h = 40;
    let w = 40;
    // Band 1 shows the same pattern translated by (+3, -2): its pixel (r, c)
    // holds pattern(r - 3, c + 2).
    let v = vol(h, w, 2, |b, r, c| {
        if b == 0 {
            pattern(r, c)
        } else {
            let sr = r as isize - 3;
            let sc = c as isize + 2;
            let sr = sr.clamp(0, h as isize - 1) as usize;
            let sc = sc.clamp(0, w as isize - 1) as usize;
            pattern(sr, sc)
        }
    });
    let out = align_bands(&v).unwrap();
    assert_eq!(out.shifts[0], (0, 0));
    assert_eq!(out.shifts[1], (-3, 2));
    // Interior pixels (away from replicated edges) must match band 0 exactly.
    for r in 10..30 {
        for c in 10..30 {
            let a = out.volume.at(1, r, c);
            let e = pattern(r, c);
            assert!((a - e).abs() < 1e-12, "({r},{c}): {a} vs {e}");
        }
    }
}

#[test]
fn alignment_is_idempotent() {
    let v = vol(32, 32, 3, |b, r, c| {
        let (r, c) = match b {
            1 => (r + 2, c),
            2 => (r, c + 1),
            _ => (r, c),
        };
        (r as f64 * 0.37).sin() * (c as f64 * 0.23).cos()
    });
    let once = align_bands(&v).unwrap();
    let twice = align_bands(&once.volume).unwrap();
    assert_eq!(twice.shifts, vec![(0, 0); 3]);
    assert_eq!(twice.volume.data, once.volume.data);
}

#[test]
fn constant_band_is_skipped_with_zero_shift() {
    let v = vol(20, 20, 3, |b, r, c| {
        if b == 1 {
            0.5
        } else {
            (r as f64 * 0.61).sin() + (c as f64 * 0.47).cos()
        }
    });
    let out = align_bands(&v).unwrap();
    assert_eq!(out.skipped, vec![1]);
    assert_eq!(out.shifts[1], (0, 0));
    assert_eq!(out.volume.plane(1), v.plane(1));
}

#[test]
fn alignment_needs_two_bands() {
    let v = vol(8, 8, 1, |_, r, c| (r + c) as f64);
    assert!(matches!(align_bands(&v), Err(Error::InvalidInput(_))));
}

// ---------------------------------------------------------- MNF oracle code

/// Plain Cholesky, written independently of the implementation under test.
fn chol_oracle(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve L x = b (lower triangular).
fn forward_sub(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solve Lᵀ x = b.
fn backward_sub(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Cyclic Jacobi eigensolver for a symmetric matrix; returns eigenvalues and
/// eigenvectors as columns of `v` (row-major storage).
fn jacobi_eigen(m: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = m.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).map(move |q| (p, q)))
            .filter(|&(p, q)| p != q)
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        if off < 1e-300 {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                if a[p * n + q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * a[p * n + q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i * n + i]).collect();
    (vals, v)
}

/// Generalized eigensolver oracle: Σ v = λ Σ_N v, eigenvalues descending,
/// eigenvectors as rows. Uses only the helpers above.
fn generalized_eigen_oracle(sigma: &[f64], sigma_n: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let l = chol_oracle(sigma_n, n).expect("oracle noise covariance must be PD");
    // M = L⁻¹ Σ L⁻ᵀ, built column by column.
    let mut m = vec![0.0; n * n];
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| sigma[i * n + j]).collect();
        let y = forward_sub(&l, n, &col);
        for i in 0..n {
            m[i * n + j] = y[i];
        }
    }
    let mut mt = vec![0.0; n * n];
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| m[i * n + j]).collect();
        let y = forward_sub(&l, n, &row);
        for j in 0..n {
            mt[i * n + j] = y[j];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (mt[i * n + j] + mt[j * n + i]);
            mt[i * n + j] = s;
            mt[j * n + i] = s;
        }
    }
    let (vals, q) = jacobi_eigen(&mt, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());
    let mut eigenvalues = Vec::with_capacity(n);
    let mut rows = vec![0.0; n * n];
    for (out, &src) in order.iter().enumerate() {
        eigenvalues.push(vals[src]);
        let qcol: Vec<f64> = (0..n).map(|k| q[k * n + src]).collect();
        let vcol = backward_sub(&l, n, &qcol);
        for k in 0..n {
            rows[out * n + k] = vcol[k];
        }
    }
    (eigenvalues, rows)
}

/// Population covariance computed with plain loops, for oracle use.
fn cov_oracle(samples: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x / n;
        }
    }
    let mut cov = vec![0.0; dim * dim];
    for s in samples {
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] += (s[i] - mean[i]) * (s[j] - mean[j]) / n;
            }
        }
    }
    cov
}

// ----------------------------------------------------------------- MNF fits

#[test]
fn white_noise_eigen_snrs_are_near_one() {
    let v = noise_vol(48, 48, 5, 0.1, 11);
    let model = fit_mnf(&v).unwrap();
    for &l in &model.eigenvalues {
        assert!((l - 1.0).abs() < 0.15, "eigen-SNR {l} far from 1");
    }
    assert_eq!(model.retained_components, 1);
    assert!(model.ridge.is_none());
}

#[test]
fn hand_built_cube_matches_independent_eigensolver() {
    // 4x4x3 cube mixing smooth structure and deterministic jitter; small
    // enough that the oracle solves the full 3x3 generalized problem.
    let v = vol(4, 4, 3, |b, r, c| {
        let t = (r * 4 + c) as f64;
        0.5 + 0.3 * (t * 0.7 + b as f64).sin() + 0.05 * ((t * 2.3).cos() * (b as f64 + 1.0))
    });
    let model = fit_mnf(&v).unwrap();
    assert!(model.ridge.is_none());

    let b = 3;
    let pixels: Vec<Vec<f64>> = (0..4)
        .flat_map(|r| (0..4).map(move |c| (r, c)))
        .map(|(r, c)| v.spectrum(r, c))
        .collect();
    let sigma = cov_oracle(&pixels, b);
    let diffs: Vec<Vec<f64>> = (0..4)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|(r, c)| (0..b).map(|bi| v.at(bi, r, c) - v.at(bi, r, c + 1)).collect())
        .collect();
    let sigma_n: Vec<f64> = cov_oracle(&diffs, b).iter().map(|x| 0.5 * x).collect();

    let (evals, evecs) = generalized_eigen_oracle(&sigma, &sigma_n, b);
    for (i, (got, want)) in model.eigenvalues.iter().zip(&evals).enumerate() {
        assert!(
            (got - want).abs() < 1e-8,
            "eigenvalue {i}: {got} vs oracle {want}"
        );
    }
    // Eigenvectors are unique up to sign here (distinct eigenvalues): align
    // on the largest oracle component and compare entrywise.
    for i in 0..b {
        let orow = &evecs[i * b..(i + 1) * b];
        let mrow = &model.forward_basis[i * b..(i + 1) * b];
        let pivot = (0..b).max_by(|&x, &y| orow[x].abs().partial_cmp(&orow[y].abs()).unwrap()).unwrap();
        let sign = if orow[pivot].signum() == mrow[pivot].signum() { 1.0 } else { -1.0 };
        for k in 0..b {
            assert!(
                (mrow[k] * sign - orow[k]).abs() < 1e-8,
                "eigenvector {i} component {k}: {} vs oracle {}",
                mrow[k] * sign,
                orow[k]
            );
        }
    }
}

#[test]
fn generalized_residuals_vanish() {
    let v = noise_vol(20, 20, 4, 0.2, 3);
    let model = fit_mnf(&v).unwrap();
    let b = 4;
    // ‖Σ v − λ Σ_N v‖∞ < 1e-8 for every eigenpair, using the model's own
    // covariance fields.
    for i in 0..b {
        let vi = &model.forward_basis[i * b..(i + 1) * b];
        for r in 0..b {
            let sv: f64 = (0..b).map(|k| model.data_covariance[r * b + k] * vi[k]).sum();
            let nv: f64 = (0..b).map(|k| model.noise_covariance[r * b + k] * vi[k]).sum();
            let res = sv - model.eigenvalues[i] * nv;
            assert!(res.abs() < 1e-8, "residual {res} at pair {i} row {r}");
        }
    }
}

#[test]
fn rank_one_signal_concentrates_in_first_component() {
    let dir = [0.6, 0.6, 0.3, 0.2, 0.35, 0.1];
    let h = 40;
    let w = 40;
    let clean = move |b: usize, r: usize, c: usize| {
        let g = (r as f64 * std::f64::consts::PI / 20.0).sin()
            * (c as f64 * std::f64::consts::PI / 20.0).cos();
        1.0 + dir[b] * g
    };
    let noise = noise_vol(h, w, 6, 0.05, 29);
    let v = vol(h, w, 6, |b, r, c| clean(b, r, c) + noise.at(b, r, c));
    let model = fit_mnf(&v).unwrap();
    assert!(model.eigenvalues[0] > 5.0, "signal SNR {}", model.eigenvalues[0]);
    for &l in &model.eigenvalues[1..] {
        assert!(l > 0.5 && l < 2.0, "noise SNR {l} outside (0.5, 2)");
    }
    assert_eq!(model.retained_components, 1);

    // Keeping that single component must denoise: reconstruction closer to
    // the clean signal than the noisy input is.
    let denoised = apply_mnf(&v, &model, 1).unwrap();
    let mut mse_noisy = 0.0;
    let mut mse_denoised = 0.0;
    for b in 0..6 {
        for r in 0..h {
            for c in 0..w {
                let cl = clean(b, r, c);
                mse_noisy += (v.at(b, r, c) - cl).powi(2);
                mse_denoised += (denoised.at(b, r, c) - cl).powi(2);
            }
        }
    }
    assert!(
        mse_denoised < mse_noisy,
        "denoised MSE {mse_denoised} not below noisy MSE {mse_noisy}"
    );
}

#[test]
fn full_rank_reconstruction_is_identity() {
    let v = noise_vol(16, 16, 5, 0.3, 17);
    let model = fit_mnf(&v).unwrap();
    let out = apply_mnf(&v, &model, 5).unwrap();
    let worst = v
        .data
        .iter()
        .zip(&out.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-8, "identity reconstruction off by {worst}");
}

#[test]
fn forward_inverse_is_identity_both_ways() {
    let v = noise_vol(16, 16, 4, 0.2, 23);
    let model = fit_mnf(&v).unwrap();
    let b = 4;
    for (first, second) in [
        (&model.forward_basis, &model.inverse_basis),
        (&model.inverse_basis, &model.forward_basis),
    ] {
        for i in 0..b {
            for j in 0..b {
                let mut acc = 0.0;
                for k in 0..b {
                    acc += first[i * b + k] * second[k * b + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-8, "product[{i}][{j}] = {acc}");
            }
        }
    }
}

#[test]
fn eigenvalues_are_sorted_descending() {
    let v = noise_vol(24, 24, 6, 0.15, 31);
    let model = fit_mnf(&v).unwrap();
    for pair in model.eigenvalues.windows(2) {
        assert!(pair[0] >= pair[1], "eigenvalues not descending: {pair:?}");
    }
}

#[test]
fn singular_noise_covariance_gets_a_recorded_ridge() {
    // Band 1 is exactly twice band 0, so neighbor differences are perfectly
    // correlated and the noise covariance is singular.
    let base = noise_vol(12, 12, 1, 0.2, 41);
    let v = vol(12, 12, 2, |b, r, c| {
        let x = base.at(0, r, c);
        if b == 0 {
            x
        } else {
            2.0 * x
        }
    });
    let model = fit_mnf(&v).unwrap();
    let eps = model.ridge.expect("ridge must be recorded");
    assert!(eps > 0.0);
    // The stored covariance is the ridged one; it must be what the
    // eigenpairs were solved against (residual check repeats implicitly via
    // the identity property).
    let out = apply_mnf(&v, &model, 2).unwrap();
    let worst = v
        .data
        .iter()
        .zip(&out.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "ridged reconstruction off by {worst}");
}

#[test]
fn component_count_is_validated() {
    let v = noise_vol(10, 10, 3, 0.2, 5);
    let model = fit_mnf(&v).unwrap();
    assert!(matches!(apply_mnf(&v, &model, 0), Err(Error::Parameter(_))));
    assert!(matches!(apply_mnf(&v, &model, 4), Err(Error::Parameter(_))));
}

#[test]
fn fit_needs_more_pixels_than_bands() {
    let v = noise_vol(2, 2, 4, 0.2, 7);
    assert!(matches!(fit_mnf(&v), Err(Error::InvalidInput(_))));
    let narrow = noise_vol(8, 1, 2, 0.2, 9);
    assert!(matches!(fit_mnf(&narrow), Err(Error::InvalidInput(_))));
}

// ------------------------------------------------------------------ patches

fn flat_vol(h: usize, w: usize, b: usize) -> Volume {
    vol(h, w, b, |bi, r, c| 0.001 * (bi * h * w + r * w + c) as f64)
}

#[test]
fn exact_fit_mask_yields_one_patch_at_its_corner() {
    let v = flat_vol(80, 80, 3);
    let region = AnnotatedRegion::rect(80, 80, 5, 7, 32, 32, Label::Tumor, "r0".into()).unwrap();
    let patches =
        extract_patches(&v, &region, "p1", ExtractMode::Ordered, &PatchParams::default()).unwrap();
    assert_eq!(patches.len(), 1);
    let p = &patches[0];
    assert_eq!(p.origin, (5, 7));
    assert_eq!((p.size, p.bands), (32, 3));
    assert_eq!(p.label, Label::Tumor);
    assert_eq!(p.region_id, "r0");
    assert_eq!(p.patient_id, "p1");
    for b in 0..3 {
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(p.at(b, r, c), v.at(b, 5 + r, 7 + c));
            }
        }
    }
}

#[test]
fn grid_counts_match_closed_form() {
    let v = flat_vol(100, 100, 2);
    let region = AnnotatedRegion::rect(100, 100, 10, 20, 64, 64, Label::Healthy, "r1".into()).unwrap();
    let params = PatchParams::default();
    let patches = extract_patches(&v, &region, "p", ExtractMode::Ordered, &params).unwrap();
    // floor((64-32)/16)+1 = 3 per axis.
    assert_eq!(patches.len(), 9);
    let origins: Vec<(usize, usize)> = patches.iter().map(|p| p.origin).collect();
    for r in [10, 26, 42] {
        for c in [20, 36, 52] {
            assert!(origins.contains(&(r, c)), "missing origin ({r},{c})");
        }
    }
}

#[test]
fn too_small_mask_yields_no_patches() {
    let v = flat_vol(60, 60, 2);
    let region = AnnotatedRegion::rect(60, 60, 4, 4, 20, 20, Label::Tumor, "r2".into()).unwrap();
    let patches =
        extract_patches(&v, &region, "p", ExtractMode::Ordered, &PatchParams::default()).unwrap();
    assert!(patches.is_empty());
}

#[test]
fn footprints_stay_inside_an_l_shaped_mask() {
    let h = 96;
    let w = 96;
    // 64x64 region with its 32x32 lower-right quadrant removed.
    let mut mask = vec![0u8; h * w];
    for r in 16..80 {
        for c in 16..80 {
            if !(r >= 48 && c >= 48) {
                mask[r * w + c] = 1;
            }
        }
    }
    let region = AnnotatedRegion::new(mask.clone(), Label::Tumor, "L".into()).unwrap();
    let v = flat_vol(h, w, 2);
    let params = PatchParams::default();
    let patches = extract_patches(&v, &region, "p", ExtractMode::Ordered, &params).unwrap();

    // Enumeration oracle over the anchored grid.
    let mut expected = 0;
    let mut r = 16;
    while r + 32 <= 80 {
        let mut c = 16;
        while c + 32 <= 80 {
            let all_in = (r..r + 32).all(|rr| (c..c + 32).all(|cc| mask[rr * w + cc] == 1));
            if all_in {
                expected += 1;
            }
            c += 16;
        }
        r += 16;
    }
    assert_eq!(patches.len(), expected);
    assert!(expected > 0 && expected < 9);
    for p in &patches {
        for rr in p.origin.0..p.origin.0 + 32 {
            for cc in p.origin.1..p.origin.1 + 32 {
                assert_eq!(mask[rr * w + cc], 1, "patch escapes mask at ({rr},{cc})");
            }
        }
    }
}

#[test]
fn training_mode_extracts_source_windows() {
    let v = flat_vol(100, 100, 2);
    let region = AnnotatedRegion::rect(100, 100, 0, 0, 72, 72, Label::Tumor, "t".into()).unwrap();
    let params = PatchParams::default();
    let patches = extract_patches(&v, &region, "p", ExtractMode::Training, &params).unwrap();
    // floor((72-36)/16)+1 = 3 per axis.
    assert_eq!(patches.len(), 9);
    assert!(patches.iter().all(|p| p.size == 36));
}

#[test]
fn mask_extent_must_match_volume() {
    let v = flat_vol(40, 40, 2);
    let region = AnnotatedRegion::rect(40, 41, 0, 0, 32, 32, Label::Tumor, "m".into()).unwrap();
    assert!(matches!(
        extract_patches(&v, &region, "p", ExtractMode::Ordered, &PatchParams::default()),
        Err(Error::Shape(_))
    ));
}

#[test]
fn patch_params_are_validated() {
    let bad_stride = PatchParams { size: 32, source_size: 36, stride: 0 };
    assert!(matches!(bad_stride.validate(), Err(Error::Parameter(_))));
    let shrunken = PatchParams { size: 32, source_size: 30, stride: 16 };
    assert!(matches!(shrunken.validate(), Err(Error::Parameter(_))));
    // Equality leaves augmentation no room to jitter.
    let exact = PatchParams { size: 32, source_size: 32, stride: 16 };
    assert!(matches!(exact.validate(), Err(Error::Parameter(_))));
}

// ------------------------------------------------------------ specular gate

fn uniform_patch(size: usize, bands: usize, value: f64) -> Patch {
    Patch {
        data: vec![value; bands * size * size],
        size,
        bands,
        label: Label::Healthy,
        region_id: "r".into(),
        patient_id: "p".into(),
        origin: (0, 0),
    }
}

#[test]
fn saturated_patch_is_rejected_dark_patch_kept() {
    let gate = SpecularParams::default();
    assert!(!specular_gate(&uniform_patch(32, 3, 1.0), &gate));
    assert!(specular_gate(&uniform_patch(32, 3, 0.0), &gate));
}

#[test]
fn rejection_is_strictly_above_max_fraction() {
    let gate = SpecularParams::default();
    // 10x10 patch: 3 hot pixels = 3% > 2% rejects, 2 hot pixels = 2% keeps.
    let mut p = uniform_patch(10, 4, 0.2);
    for i in 0..3 {
        p.data[2 * 100 + i] = 0.97;
    }
    assert!(!specular_gate(&p, &gate));
    let mut q = uniform_patch(10, 4, 0.2);
    for i in 0..2 {
        q.data[100 + i] = 0.95;
    }
    assert!(specular_gate(&q, &gate));
}

#[test]
fn gate_counts_max_over_bands() {
    let gate = SpecularParams::default();
    // A single band at threshold marks the pixel even if others are dark.
    let mut p = uniform_patch(10, 3, 0.1);
    for i in 0..3 {
        p.data[200 + i] = 0.95;
    }
    assert!(!specular_gate(&p, &gate));
}

#[test]
fn raising_intensities_never_rescues_a_rejected_patch() {
    let gate = SpecularParams::new(0.8, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut rejected = 0;
    for _ in 0..200 {
        let mut p = uniform_patch(8, 3, 0.0);
        for v in &mut p.data {
            *v = rng.gen_range(0.0..1.0);
        }
        if specular_gate(&p, &gate) {
            continue;
        }
        rejected += 1;
        let mut raised = p.clone();
        for _ in 0..20 {
            let i = rng.gen_range(0..raised.data.len());
            raised.data[i] = (raised.data[i] + rng.gen_range(0.0..0.5)).min(1.0);
        }
        assert!(!specular_gate(&raised, &gate), "raising intensity rescued a patch");
    }
    assert!(rejected > 10, "monotonicity property never exercised");
}

#[test]
fn specular_params_are_validated() {
    assert!(SpecularParams::new(0.95, 0.02).is_ok());
    assert!(SpecularParams::new(1.0, 0.0).is_ok());
    assert!(matches!(SpecularParams::new(0.0, 0.02), Err(Error::Parameter(_))));
    assert!(matches!(SpecularParams::new(1.5, 0.02), Err(Error::Parameter(_))));
    assert!(matches!(SpecularParams::new(0.9, -0.1), Err(Error::Parameter(_))));
    assert!(matches!(SpecularParams::new(0.9, 1.1), Err(Error::Parameter(_))));
}

// -------------------------------------------------------ial spectral summary

#[test]
fn constant_spectrum_summarizes_to_mean_and_zero_std() {
    let p = uniform_patch(4, 7, 5.0);
    let s = spectral_summary(&p).unwrap();
    assert_eq!((s.size, s.bands), (4, 2));
    for r in 0..4 {
        for c in 0..4 {
            assert_eq!(s.at(0, r, c), 5.0);
            assert_eq!(s.at(1, r, c), 0.0);
        }
    }
}

#[test]
fn summary_collapses_thirty_bands_to_two() {
    let p = uniform_patch(32, 30, 0.4);
    let s = spectral_summary(&p).unwrap();
    assert_eq!((s.size, s.bands), (32, 2));
    assert_eq!(s.data.len(), 2 * 32 * 32);
    assert_eq!(s.label, p.label);
    assert_eq!(s.origin, p.origin);
}

#[test]
fn summary_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut p = uniform_patch(16, 9, 0.0);
    for v in &mut p.data {
        *v = rng.gen_range(0.0..1.0);
    }
    let s = spectral_summary(&p).unwrap();
    for r in 0..16 {
        for c in 0..16 {
            let vals: Vec<f64> = (0..9).map(|b| p.at(b, r, c)).collect();
            let mean = vals.iter().sum::<f64>() / 9.0;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0;
            assert!((s.at(0, r, c) - mean).abs() < 1e-12);
            assert!((s.at(1, r, c) - var.sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn summary_commutes_with_flips_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut p = uniform_patch(12, 5, 0.0);
    for v in &mut p.data {
        *v = rng.gen_range(0.0..1.0);
    }
    for (fh, fv) in [(true, false), (false, true), (true, true)] {
        let flipped_then_summed =
            spectral_summary(&crop_flip(&p, 12, (0, 0), fh, fv).unwrap()).unwrap();
        let summed_then_flipped =
            crop_flip(&spectral_summary(&p).unwrap(), 12, (0, 0), fh, fv).unwrap();
        assert_eq!(flipped_then_summed.data, summed_then_flipped.data);
    }
}

#[test]
fn summary_needs_two_bands() {
    let p = uniform_patch(8, 1, 0.3);
    assert!(matches!(spectral_summary(&p), Err(Error::InvalidInput(_))));
}

// -------------------------------------------------------------- augmentation

fn numbered_source(size: usize, bands: usize) -> Patch {
    let mut p = uniform_patch(size, bands, 0.0);
    for (i, v) in p.data.iter_mut().enumerate() {
        *v = i as f64;
    }
    p
}

#[test]
fn forced_corner_crop_equals_manual_slice() {
    let src = numbered_source(36, 3);
    let crop = crop_flip(&src, 32, (0, 0), false, false).unwrap();
    for b in 0..3 {
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(crop.at(b, r, c), src.at(b, r, c));
            }
        }
    }
    assert_eq!(crop.origin, (0, 0));
}

#[test]
fn crop_offsets_shift_the_window() {
    let src = numbered_source(36, 2);
    let crop = crop_flip(&src, 32, (4, 2), false, false).unwrap();
    for b in 0..2 {
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(crop.at(b, r, c), src.at(b, r + 4, c + 2));
            }
        }
    }
    assert_eq!(crop.origin, (4, 2));
}

#[test]
fn double_flip_is_the_identity() {
    let src = numbered_source(12, 2);
    for (fh, fv) in [(true, false), (false, true), (true, true)] {
        let once = crop_flip(&src, 12, (0, 0), fh, fv).unwrap();
        let twice = crop_flip(&once, 12, (0, 0), fh, fv).unwrap();
        assert_eq!(twice.data, src.data);
    }
}

#[test]
fn flips_mirror_the_expected_axes() {
    let src = numbered_source(4, 1);
    let h = crop_flip(&src, 4, (0, 0), true, false).unwrap();
    assert_eq!(h.at(0, 0, 0), src.at(0, 0, 3));
    assert_eq!(h.at(0, 2, 1), src.at(0, 2, 2));
    let v = crop_flip(&src, 4, (0, 0), false, true).unwrap();
    assert_eq!(v.at(0, 0, 0), src.at(0, 3, 0));
    assert_eq!(v.at(0, 1, 2), src.at(0, 2, 2));
}

#[test]
fn augment_offsets_are_uniform() {
    let src = numbered_source(36, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut counts = [[0u32; 5]; 5];
    let draws = 10_000;
    for _ in 0..draws {
        let a = augment(&src, 32, &mut rng).unwrap();
        counts[a.origin.0][a.origin.1] += 1;
    }
    for (r, row) in counts.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            let freq = n as f64 / draws as f64;
            assert!(
                (freq - 0.04).abs() <= 0.01,
                "offset ({r},{c}) frequency {freq} outside 0.04 ± 0.01"
            );
        }
    }
}

#[test]
fn augment_preserves_metadata_and_band_order() {
    let mut src = numbered_source(36, 4);
    src.label = Label::Tumor;
    src.region_id = "region-9".into();
    src.patient_id = "P042".into();
    src.origin = (10, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = augment(&src, 32, &mut rng).unwrap();
    assert_eq!(a.label, Label::Tumor);
    assert_eq!(a.region_id, "region-9");
    assert_eq!(a.patient_id, "P042");
    assert_eq!((a.size, a.bands), (32, 4));
    // Band planes must come from the matching source band: values were
    // numbered so each band occupies a disjoint range.
    for b in 0..4 {
        let lo = (b * 36 * 36) as f64;
        let hi = ((b + 1) * 36 * 36) as f64;
        for r in 0..32 {
            for c in 0..32 {
                let x = a.at(b, r, c);
                assert!(x >= lo && x < hi, "band {b} holds foreign value {x}");
            }
        }
    }
}

#[test]
fn augment_requires_room_to_crop() {
    let src = numbered_source(32, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(augment(&src, 32, &mut rng), Err(Error::Parameter(_))));
}

#[test]
fn crop_flip_bounds_are_checked() {
    let src = numbered_source(36, 2);
    assert!(matches!(crop_flip(&src, 32, (5, 0), false, false), Err(Error::Parameter(_))));
    assert!(matches!(crop_flip(&src, 40, (0, 0), false, false), Err(Error::Parameter(_))));
}

// -------------------------------------------------------------- patch cache

#[test]
fn patch_cache_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("patches.hsip");
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut patches = Vec::new();
    for i in 0..5 {
        let mut p = uniform_patch(9, 3, 0.0);
        for v in &mut p.data {
            *v = rng.gen_range(0.0..1.0);
        }
        p.label = if i % 2 == 0 { Label::Tumor } else { Label::Healthy };
        p.region_id = format!("r{i}");
        p.patient_id = format!("P{i:03}");
        p.origin = (i, 2 * i);
        patches.push(p);
    }
    write_patches(&path, &patches).unwrap();
    let back = read_patches(&path).unwrap();
    assert_eq!(back, patches);
}

#[test]
fn empty_patch_cache_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("none.hsip");
    write_patches(&path, &[]).unwrap();
    assert!(read_patches(&path).unwrap().is_empty());
}

#[test]
fn patch_cache_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("patches.hsip");
    write_patches(&path, &[uniform_patch(4, 2, 0.5)]).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    std::fs::write(&path, &bad_magic).unwrap();
    match read_patches(&path) {
        Err(Error::Format { offset: 0, .. }) => {}
        other => panic!("expected bad-magic error, got {other:?}"),
    }

    let mut truncated = good.clone();
    truncated.truncate(good.len() - 3);
    std::fs::write(&path, &truncated).unwrap();
    match read_patches(&path) {
        Err(Error::Format { what, .. }) => assert!(what.contains("truncated")),
        other => panic!("expected truncation error, got {other:?}"),
    }

    let mut trailing = good.clone();
    trailing.push(0);
    std::fs::write(&path, &trailing).unwrap();
    match read_patches(&path) {
        Err(Error::Format { what, .. }) => assert!(what.contains("trailing")),
        other => panic!("expected trailing-bytes error, got {other:?}"),
    }

    // Label byte sits right after the two u32 extents of the first patch.
    let mut bad_label = good.clone();
    let label_at = 4 + 2 + 4 + 4 + 4;
    bad_label[label_at] = 9;
    std::fs::write(&path, &bad_label).unwrap();
    match read_patches(&path) {
        Err(Error::Format { offset, what }) => {
            assert_eq!(offset, label_at as u64);
            assert!(what.contains("label"));
        }
        other => panic!("expected label error, got {other:?}"),
    }
}
