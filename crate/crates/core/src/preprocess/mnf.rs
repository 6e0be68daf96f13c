//! Minimum noise fraction transform.
//!
//! Noise covariance is estimated from horizontal neighbor differences,
//! Σ_N = ½·cov(x[r,c] − x[r,c+1]). Solving the generalized symmetric
//! eigenproblem Σ v = λ Σ_N v through the Cholesky reduction
//! M = L⁻¹ Σ L⁻ᵀ, v = L⁻ᵀ q orders components by eigen-SNR λ (pure white
//! noise gives λ ≈ 1 everywhere). Denoising keeps the top k components and
//! reconstructs: the eigenvectors are Σ_N-orthonormal, so the reconstruction
//! basis is Σ_N·V and forward·inverse is the identity.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

use super::Volume;

/// Fitted MNF basis for one volume.
#[derive(Clone, Debug)]
pub struct MnfModel {
    pub bands: usize,
    /// Noise covariance actually used (ridge included when applied), B×B row-major.
    pub noise_covariance: Vec<f64>,
    pub data_covariance: Vec<f64>,
    /// Eigen-SNRs, descending.
    pub eigenvalues: Vec<f64>,
    /// Rows are eigenvectors vᵀ: components = forward · (x − mean).
    pub forward_basis: Vec<f64>,
    /// Columns reconstruct: x = mean + inverse · components.
    pub inverse_basis: Vec<f64>,
    pub band_means: Vec<f64>,
    /// Diagonal ridge added to a singular noise covariance, if any.
    pub ridge: Option<f64>,
    /// Default retained components: every eigen-SNR ≥ 2, at least one.
    pub retained_components: usize,
}

/// SNR threshold for the default component count.
const SNR_KEEP: f64 = 2.0;

fn covariance(samples: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![0.0; dim * dim];
    for s in samples {
        for i in 0..dim {
            let di = s[i] - mean[i];
            for j in i..dim {
                cov[i * dim + j] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / n;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    cov
}

/// Fit the MNF basis to a volume.
pub fn fit_mnf(volume: &Volume) -> Result<MnfModel> {
    let b = volume.bands;
    let (h, w) = (volume.height, volume.width);
    if h * w < b + 1 {
        return Err(Error::InvalidInput(format!(
            "MNF needs more pixels than bands: {}x{} vs {b} bands",
            h, w
        )));
    }
    if w < 2 {
        return Err(Error::InvalidInput(
            "noise estimation needs at least 2 columns".into(),
        ));
    }

    // Band means and data covariance over all pixels.
    let pixels: Vec<Vec<f64>> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| volume.spectrum(r, c))
        .collect();
    let mut band_means = vec![0.0; b];
    for p in &pixels {
        for (m, v) in band_means.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut band_means {
        *m /= (h * w) as f64;
    }
    let data_cov = covariance(&pixels, b);

    // Horizontal neighbor differences; Σ_N = ½ cov(d).
    let diffs: Vec<Vec<f64>> = (0..h)
        .flat_map(|r| (0..w - 1).map(move |c| (r, c)))
        .map(|(r, c)| {
            (0..b)
                .map(|bi| volume.at(bi, r, c) - volume.at(bi, r, c + 1))
                .collect()
        })
        .collect();
    let mut noise_cov = covariance(&diffs, b);
    for v in &mut noise_cov {
        *v *= 0.5;
    }

    let sigma = DMatrix::from_row_slice(b, b, &data_cov);
    let mut sigma_n = DMatrix::from_row_slice(b, b, &noise_cov);
    let mut ridge = None;

    // Cholesky can numerically succeed on a singular matrix with a
    // rounding-level pivot; such factorizations would blow up the whitening
    // solves, so they count as singular too.
    let pivot_floor = 1e-12 * sigma_n.trace() / b as f64;
    let mut chol = sigma_n
        .clone()
        .cholesky()
        .filter(|c| c.l_dirty().diagonal().iter().all(|&d| d * d >= pivot_floor));
    if chol.is_none() {
        let eps = 1e-9 * sigma_n.trace() / b as f64;
        for i in 0..b {
            sigma_n[(i, i)] += eps;
        }
        ridge = Some(eps);
        chol = sigma_n.clone().cholesky();
    }
    let chol = chol.ok_or_else(|| {
        Error::InvalidInput("noise covariance not positive definite even after ridge".into())
    })?;

    // M = L⁻¹ Σ L⁻ᵀ, symmetrized against rounding.
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&sigma)
        .ok_or_else(|| Error::InvalidInput("triangular solve failed".into()))?;
    let m = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::InvalidInput("triangular solve failed".into()))?
        .transpose();
    let m = (&m + m.transpose()) * 0.5;

    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });

    let mut eigenvalues = Vec::with_capacity(b);
    let mut q = DMatrix::zeros(b, b);
    for (col, &src) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[src]);
        q.set_column(col, &eig.eigenvectors.column(src));
    }

    // v = L⁻ᵀ q; columns of V solve Σ v = λ Σ_N v and satisfy VᵀΣ_N V = I.
    let v = l
        .transpose()
        .solve_upper_triangular(&q)
        .ok_or_else(|| Error::InvalidInput("triangular solve failed".into()))?;
    let forward = v.transpose();
    let inverse = &sigma_n * &v;

    let retained = eigenvalues.iter().filter(|&&l| l >= SNR_KEEP).count().max(1);

    Ok(MnfModel {
        bands: b,
        noise_covariance: sigma_n.transpose().as_slice().to_vec(),
        data_covariance: data_cov,
        eigenvalues,
        forward_basis: forward.transpose().as_slice().to_vec(),
        inverse_basis: inverse.transpose().as_slice().to_vec(),
        band_means,
        ridge,
        retained_components: retained,
    })
}

/// Reconstruct the volume from its top `k` MNF components.
pub fn apply_mnf(volume: &Volume, model: &MnfModel, k: usize) -> Result<Volume> {
    let b = model.bands;
    if volume.bands != b {
        return Err(Error::Shape(format!(
            "volume has {} bands but model was fitted on {b}",
            volume.bands
        )));
    }
    if k < 1 || k > b {
        return Err(Error::Parameter(format!(
            "retained components {k} outside 1..={b}"
        )));
    }

    // Single B×B operator: x̂ = mean + (W_k F_k)(x − mean).
    let mut op = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            let mut acc = 0.0;
            for c in 0..k {
                acc += model.inverse_basis[i * b + c] * model.forward_basis[c * b + j];
            }
            op[i * b + j] = acc;
        }
    }

    let (h, w) = (volume.height, volume.width);
    let mut out = vec![0.0; volume.data.len()];
    let mut centered = vec![0.0; b];
    for r in 0..h {
        for c in 0..w {
            for bi in 0..b {
                centered[bi] = volume.at(bi, r, c) - model.band_means[bi];
            }
            for bi in 0..b {
                let row = &op[bi * b..(bi + 1) * b];
                let mut acc = model.band_means[bi];
                for (o, x) in row.iter().zip(&centered) {
                    acc += o * x;
                }
                out[(bi * h + r) * w + c] = acc;
            }
        }
    }
    Volume::new(h, w, b, out)
}
