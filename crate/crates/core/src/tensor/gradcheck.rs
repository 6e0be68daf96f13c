//! Central finite-difference verification of recorded gradients.
//!
//! Every differentiable primitive is checked by rebuilding a scalar loss on a
//! fresh tape with one parameter entry nudged by ±[`FD_STEP`] and comparing
//! `(f(x+h) - f(x-h)) / 2h` against the adjoint from [`Tensor::backward`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

use super::{ops, Mode, RunningStats, Tape, Tensor};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Maximum admissible relative error between analytic and numeric gradients.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Outcome of one finite-difference check.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    /// Worst relative error over every component of every parameter.
    pub max_rel_error: f64,
    /// Number of scalar components compared.
    pub points: usize,
    pub pass: bool,
}

/// Relative error with a unit floor so near-zero gradients are compared
/// absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare recorded gradients of `build` against central differences.
///
/// `build` must deterministically map parameter tensors (created in the given
/// order) to a scalar loss; it is re-invoked on a fresh tape for every
/// perturbed evaluation, so any state it needs (running statistics, fixed
/// weighting leaves) must be created inside the closure.
pub fn check_scalar_fn(
    name: &str,
    params: &[(Vec<usize>, Vec<f64>)],
    build: impl Fn(&Tape, &[Tensor]) -> Result<Tensor>,
) -> Result<GradCheckReport> {
    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let tensors: Vec<Tensor> = params
            .iter()
            .zip(values)
            .map(|((shape, _), vals)| tape.leaf(shape, vals.clone()))
            .collect::<Result<_>>()?;
        Ok(build(&tape, &tensors)?.item())
    };

    // Analytic pass.
    let tape = Tape::new();
    let tensors: Vec<Tensor> = params
        .iter()
        .map(|(shape, vals)| tape.param(shape, vals.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&tape, &tensors)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = tensors
        .iter()
        .map(|t| t.grad().expect("parameter gradient recorded"))
        .collect();

    let baseline: Vec<Vec<f64>> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut max_rel = 0.0_f64;
    let mut points = 0;
    for (pi, values) in baseline.iter().enumerate() {
        for j in 0..values.len() {
            let mut plus = baseline.clone();
            plus[pi][j] += FD_STEP;
            let mut minus = baseline.clone();
            minus[pi][j] -= FD_STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            max_rel = max_rel.max(relative_error(analytic[pi][j], numeric));
            points += 1;
        }
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: max_rel,
        points,
        pass: max_rel < FD_TOLERANCE,
    })
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Magnitudes in [0.1, 2] with random sign keep relu and the loss away
    // from their nondifferentiable or saturated neighborhoods.
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..2.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn weighted_sum(y: &Tensor, weights: &Tensor) -> Result<Tensor> {
    ops::sum(&ops::mul(y, weights)?)
}

/// Finite-difference checks for every differentiable primitive.
///
/// Each case reduces the op's output to a scalar through a fixed random
/// weighting so nonuniform upstream adjoints are exercised.
pub fn run_primitive_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    {
        let n = 12;
        let a = (vec![3, 4], random_values(&mut rng, n));
        let b = (vec![3, 4], random_values(&mut rng, n));
        let w = random_values(&mut rng, n);
        reports.push(check_scalar_fn("add", &[a, b], |tape, p| {
            let wt = tape.leaf(&[3, 4], w.clone())?;
            weighted_sum(&ops::add(&p[0], &p[1])?, &wt)
        })?);
    }
    {
        let n = 12;
        let a = (vec![3, 4], random_values(&mut rng, n));
        let b = (vec![3, 4], random_values(&mut rng, n));
        let w = random_values(&mut rng, n);
        reports.push(check_scalar_fn("mul", &[a, b], |tape, p| {
            let wt = tape.leaf(&[3, 4], w.clone())?;
            weighted_sum(&ops::mul(&p[0], &p[1])?, &wt)
        })?);
    }
    {
        let x = (vec![2, 5], random_values(&mut rng, 10));
        let w = random_values(&mut rng, 10);
        reports.push(check_scalar_fn("scale", &[x], |tape, p| {
            let wt = tape.leaf(&[2, 5], w.clone())?;
            weighted_sum(&ops::scale(&p[0], -1.7)?, &wt)
        })?);
    }
    {
        let x = (vec![7], random_values(&mut rng, 7));
        reports.push(check_scalar_fn("sum", &[x], |_, p| ops::sum(&p[0]))?);
    }
    {
        let x = (vec![4, 6], random_values(&mut rng, 24));
        let w = random_values(&mut rng, 24);
        reports.push(check_scalar_fn("relu", &[x], |tape, p| {
            let wt = tape.leaf(&[4, 6], w.clone())?;
            weighted_sum(&ops::relu(&p[0])?, &wt)
        })?);
    }
    {
        let input = (vec![2, 3, 5, 5], random_values(&mut rng, 150));
        let kernel = (vec![4, 3, 3, 3], random_values(&mut rng, 108));
        let w = random_values(&mut rng, 2 * 4 * 5 * 5);
        reports.push(check_scalar_fn("conv2d s1 p1", &[input, kernel], |tape, p| {
            let wt = tape.leaf(&[2, 4, 5, 5], w.clone())?;
            weighted_sum(&ops::conv2d(&p[0], &p[1], 1, 1)?, &wt)
        })?);
    }
    {
        let input = (vec![1, 2, 6, 7], random_values(&mut rng, 84));
        let kernel = (vec![3, 2, 3, 3], random_values(&mut rng, 54));
        let w = random_values(&mut rng, 3 * 2 * 3);
        reports.push(check_scalar_fn("conv2d s2 p0", &[input, kernel], |tape, p| {
            let wt = tape.leaf(&[1, 3, 2, 3], w.clone())?;
            weighted_sum(&ops::conv2d(&p[0], &p[1], 2, 0)?, &wt)
        })?);
    }
    {
        let input = (vec![2, 2, 4, 4, 4], random_values(&mut rng, 256));
        let kernel = (vec![3, 2, 3, 3, 3], random_values(&mut rng, 162));
        let w = random_values(&mut rng, 2 * 3 * 4 * 4 * 4);
        reports.push(check_scalar_fn("conv3d s1 p1", &[input, kernel], |tape, p| {
            let wt = tape.leaf(&[2, 3, 4, 4, 4], w.clone())?;
            weighted_sum(&ops::conv3d(&p[0], &p[1], 1, 1)?, &wt)
        })?);
    }
    {
        let input = (vec![1, 2, 5, 4, 5], random_values(&mut rng, 200));
        let kernel = (vec![2, 2, 3, 3, 3], random_values(&mut rng, 108));
        let w = random_values(&mut rng, 2 * 3 * 2 * 3);
        reports.push(check_scalar_fn("conv3d s2 p1", &[input, kernel], |tape, p| {
            let wt = tape.leaf(&[1, 2, 3, 2, 3], w.clone())?;
            weighted_sum(&ops::conv3d(&p[0], &p[1], 2, 1)?, &wt)
        })?);
    }
    {
        let x = (vec![3, 4, 2, 2], random_values(&mut rng, 48));
        let gamma = (vec![4], random_values(&mut rng, 4));
        let beta = (vec![4], random_values(&mut rng, 4));
        let w = random_values(&mut rng, 48);
        reports.push(check_scalar_fn(
            "batch_norm train",
            &[x, gamma, beta],
            |tape, p| {
                let wt = tape.leaf(&[3, 4, 2, 2], w.clone())?;
                let mut stats = RunningStats::new(4);
                let y = ops::batch_norm(&p[0], &p[1], &p[2], &mut stats, Mode::Train)?;
                weighted_sum(&y, &wt)
            },
        )?);
    }
    {
        let x = (vec![3, 4, 2, 2], random_values(&mut rng, 48));
        let gamma = (vec![4], random_values(&mut rng, 4));
        let beta = (vec![4], random_values(&mut rng, 4));
        let w = random_values(&mut rng, 48);
        let mean = random_values(&mut rng, 4);
        let var: Vec<f64> = random_values(&mut rng, 4).iter().map(|v| v * v + 0.3).collect();
        reports.push(check_scalar_fn(
            "batch_norm eval",
            &[x, gamma, beta],
            move |tape, p| {
                let wt = tape.leaf(&[3, 4, 2, 2], w.clone())?;
                let mut stats = RunningStats::new(4);
                stats.mean.copy_from_slice(&mean);
                stats.var.copy_from_slice(&var);
                let y = ops::batch_norm(&p[0], &p[1], &p[2], &mut stats, Mode::Eval)?;
                weighted_sum(&y, &wt)
            },
        )?);
    }
    {
        let x = (vec![2, 3, 5, 6], random_values(&mut rng, 180));
        let w = random_values(&mut rng, 2 * 3 * 2 * 3);
        reports.push(check_scalar_fn("avg_pool2d", &[x], |tape, p| {
            let wt = tape.leaf(&[2, 3, 2, 3], w.clone())?;
            weighted_sum(&ops::avg_pool2d(&p[0])?, &wt)
        })?);
    }
    {
        let x = (vec![1, 2, 5, 4, 6], random_values(&mut rng, 240));
        let w = random_values(&mut rng, 2 * 2 * 2 * 3);
        reports.push(check_scalar_fn("avg_pool3d", &[x], |tape, p| {
            let wt = tape.leaf(&[1, 2, 2, 2, 3], w.clone())?;
            weighted_sum(&ops::avg_pool3d(&p[0])?, &wt)
        })?);
    }
    {
        let x = (vec![2, 3, 4, 5], random_values(&mut rng, 120));
        let w = random_values(&mut rng, 6);
        reports.push(check_scalar_fn("global_avg_pool", &[x], |tape, p| {
            let wt = tape.leaf(&[2, 3], w.clone())?;
            weighted_sum(&ops::global_avg_pool(&p[0])?, &wt)
        })?);
    }
    {
        let x = (vec![3, 5], random_values(&mut rng, 15));
        let wgt = (vec![4, 5], random_values(&mut rng, 20));
        let b = (vec![4], random_values(&mut rng, 4));
        let w = random_values(&mut rng, 12);
        reports.push(check_scalar_fn("dense", &[x, wgt, b], |tape, p| {
            let wt = tape.leaf(&[3, 4], w.clone())?;
            weighted_sum(&ops::dense(&p[0], &p[1], &p[2])?, &wt)
        })?);
    }
    {
        let a = (vec![2, 2, 3, 3], random_values(&mut rng, 36));
        let b = (vec![2, 3, 3, 3], random_values(&mut rng, 54));
        let c = (vec![2, 1, 3, 3], random_values(&mut rng, 18));
        let w = random_values(&mut rng, 2 * 6 * 9);
        reports.push(check_scalar_fn("concat_channels", &[a, b, c], |tape, p| {
            let wt = tape.leaf(&[2, 6, 3, 3], w.clone())?;
            weighted_sum(&ops::concat_channels(&[p[0].clone(), p[1].clone(), p[2].clone()])?, &wt)
        })?);
    }
    {
        let logits = (vec![5, 2], random_values(&mut rng, 10));
        let labels = vec![0usize, 1, 1, 0, 1];
        reports.push(check_scalar_fn("softmax_cross_entropy", &[logits], |_, p| {
            ops::softmax_cross_entropy(&p[0], &labels, [1.2143, 0.85])
        })?);
    }

    Ok(reports)
}
