//! Tape-based differentiation from the ground up: record a tiny
//! convolutional classifier on the tape, pull gradients out with one
//! backward sweep, and confirm a few of them against central differences.
//!
//! Run with `cargo run --example autodiff`.

use hsinet::tensor::gradcheck::check_scalar_fn;
use hsinet::tensor::{conv2d, dense, global_avg_pool, relu, softmax_cross_entropy, Tape};
use hsinet::Result;

fn main() -> Result<()> {
    // Two 1-channel 5x5 inputs with opposite corner gradients, labeled 0/1.
    let inputs: Vec<f64> = (0..2 * 25)
        .map(|i| {
            let (n, p) = (i / 25, i % 25);
            let (r, c) = (p / 5, p % 5);
            if n == 0 {
                0.1 * (r + c) as f64
            } else {
                0.1 * (8 - r - c) as f64
            }
        })
        .collect();
    let labels = [0usize, 1];

    // Deterministic "pretend initialization" so the printout is stable.
    let kernel: Vec<f64> = (0..2 * 9).map(|i| 0.15 * ((i as f64 * 0.7).sin())).collect();
    let weight: Vec<f64> = (0..2 * 2).map(|i| 0.3 * ((i as f64 + 1.0).cos())).collect();
    let bias = vec![0.0, 0.1];

    let tape = Tape::new();
    let x = tape.leaf(&[2, 1, 5, 5], inputs.clone())?;
    let k = tape.param(&[2, 1, 3, 3], kernel.clone())?;
    let w = tape.param(&[2, 2], weight.clone())?;
    let b = tape.param(&[2], bias.clone())?;

    let hidden = relu(&conv2d(&x, &k, 1, 1)?)?;
    let pooled = global_avg_pool(&hidden)?;
    let logits = dense(&pooled, &w, &b)?;
    let loss = softmax_cross_entropy(&logits, &labels, [1.0, 1.0])?;

    println!("tape holds {} nodes", tape.len());
    println!("loss = {:.6}", loss.item());

    loss.backward()?;
    let kernel_grad = k.grad().expect("kernel participates in the loss");
    println!("kernel gradient, first row: {:?}", &kernel_grad[..3]);

    // The same computation as a scalar function of its parameters; the
    // checker re-evaluates it under parameter nudges and compares slopes.
    let report = check_scalar_fn(
        "conv-dense classifier",
        &[
            (vec![2, 1, 3, 3], kernel),
            (vec![2, 2], weight),
            (vec![2], bias),
        ],
        |tape, params| {
            let x = tape.leaf(&[2, 1, 5, 5], inputs.clone())?;
            let hidden = relu(&conv2d(&x, &params[0], 1, 1)?)?;
            let pooled = global_avg_pool(&hidden)?;
            let logits = dense(&pooled, &params[1], &params[2])?;
            softmax_cross_entropy(&logits, &labels, [1.0, 1.0])
        },
    )?;
    println!(
        "finite differences across {} components: max relative error {:.3e} ({})",
        report.points,
        report.max_rel_error,
        if report.pass { "pass" } else { "FAIL" }
    );
    Ok(())
}
