//! Differentiable operations: forward construction and adjoint propagation.

use crate::error::{Error, Result};

use super::conv::{self, Conv2dDims, Conv3dDims};
use super::{Node, Tensor, BN_EPSILON, BN_MOMENTUM};

/// Forward-pass mode for layers whose behavior depends on it (batch norm).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean/variance owned by a normalization layer.
#[derive(Clone, Debug)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub(super) enum Op {
    Leaf,
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: f64,
    },
    Sum {
        x: usize,
    },
    Relu {
        x: usize,
    },
    Conv2d {
        input: usize,
        kernel: usize,
        dims: Conv2dDims,
    },
    Conv3d {
        input: usize,
        kernel: usize,
        dims: Conv3dDims,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        /// True when the statistics were computed from this batch, so the
        /// adjoint must flow through them as well.
        through_stats: bool,
    },
    AvgPool2d {
        x: usize,
    },
    AvgPool3d {
        x: usize,
    },
    GlobalAvgPool {
        x: usize,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    ConcatChannels {
        parts: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        weights: [f64; 2],
        probs: Vec<f64>,
    },
}

fn same_tape(a: &Tensor, b: &Tensor) {
    assert!(
        a.tape.same_tape(&b.tape),
        "operands recorded on different tapes"
    );
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_tape(a, b);
    let tape = a.tape.clone();
    let (shape, value, rg) = {
        let nodes = tape.nodes.borrow();
        let (na, nb) = (&nodes[a.idx], &nodes[b.idx]);
        if na.shape != nb.shape {
            return Err(Error::Shape(format!(
                "add: shapes {:?} and {:?} differ",
                na.shape, nb.shape
            )));
        }
        let value: Vec<f64> = na.value.iter().zip(&nb.value).map(|(x, y)| x + y).collect();
        (na.shape.clone(), value, na.requires_grad || nb.requires_grad)
    };
    Ok(tape.push(shape, value, rg, Op::Add { a: a.idx, b: b.idx }))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_tape(a, b);
    let tape = a.tape.clone();
    let (shape, value, rg) = {
        let nodes = tape.nodes.borrow();
        let (na, nb) = (&nodes[a.idx], &nodes[b.idx]);
        if na.shape != nb.shape {
            return Err(Error::Shape(format!(
                "mul: shapes {:?} and {:?} differ",
                na.shape, nb.shape
            )));
        }
        let value: Vec<f64> = na.value.iter().zip(&nb.value).map(|(x, y)| x * y).collect();
        (na.shape.clone(), value, na.requires_grad || nb.requires_grad)
    };
    Ok(tape.push(shape, value, rg, Op::Mul { a: a.idx, b: b.idx }))
}

pub fn scale(x: &Tensor, factor: f64) -> Result<Tensor> {
    let tape = x.tape.clone();
    let (shape, value, rg) = {
        let nodes = tape.nodes.borrow();
        let n = &nodes[x.idx];
        let value: Vec<f64> = n.value.iter().map(|v| v * factor).collect();
        (n.shape.clone(), value, n.requires_grad)
    };
    Ok(tape.push(shape, value, rg, Op::Scale { x: x.idx, factor }))
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum(x: &Tensor) -> Result<Tensor> {
    let tape = x.tape.clone();
    let (value, rg) = {
        let nodes = tape.nodes.borrow();
        let n = &nodes[x.idx];
        (n.value.iter().sum::<f64>(), n.requires_grad)
    };
    Ok(tape.push(vec![1], vec![value], rg, Op::Sum { x: x.idx }))
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    let tape = x.tape.clone();
    let (shape, value, rg) = {
        let nodes = tape.nodes.borrow();
        let n = &nodes[x.idx];
        let value: Vec<f64> = n.value.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        (n.shape.clone(), value, n.requires_grad)
    };
    Ok(tape.push(shape, value, rg, Op::Relu { x: x.idx }))
}

/// 2D cross-correlation over `[N,C,H,W]` with kernel `[F,C,kH,kW]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    same_tape(input, kernel);
    let tape = input.tape.clone();
    let (dims, value, rg) = {
        let nodes = tape.nodes.borrow();
        let (ni, nk) = (&nodes[input.idx], &nodes[kernel.idx]);
        let dims = conv::conv2d_dims(&ni.shape, &nk.shape, stride, padding)?;
        let mut out = vec![0.0; dims.n * dims.f * dims.h_out * dims.w_out];
        conv::conv2d_forward(&dims, &ni.value, &nk.value, &mut out);
        (dims, out, ni.requires_grad || nk.requires_grad)
    };
    Ok(tape.push(
        vec![dims.n, dims.f, dims.h_out, dims.w_out],
        value,
        rg,
        Op::Conv2d {
            input: input.idx,
            kernel: kernel.idx,
            dims,
        },
    ))
}

/// 3D cross-correlation over `[N,C,D,H,W]` with kernel `[F,C,kD,kH,kW]`.
pub fn conv3d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    same_tape(input, kernel);
    let tape = input.tape.clone();
    let (dims, value, rg) = {
        let nodes = tape.nodes.borrow();
        let (ni, nk) = (&nodes[input.idx], &nodes[kernel.idx]);
        let dims = conv::conv3d_dims(&ni.shape, &nk.shape, stride, padding)?;
        let mut out = vec![0.0; dims.n * dims.f * dims.d_out * dims.h_out * dims.w_out];
        conv::conv3d_forward(&dims, &ni.value, &nk.value, &mut out);
        (dims, out, ni.requires_grad || nk.requires_grad)
    };
    Ok(tape.push(
        vec![dims.n, dims.f, dims.d_out, dims.h_out, dims.w_out],
        value,
        rg,
        Op::Conv3d {
            input: input.idx,
            kernel: kernel.idx,
            dims,
        },
    ))
}

/// Batch normalization over channel axis 1.
///
/// Train mode normalizes by this batch's per-channel statistics (population
/// variance, epsilon [`BN_EPSILON`]) and folds them into `running` with
/// momentum [`BN_MOMENTUM`]; eval mode normalizes by `running` unchanged.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut RunningStats,
    mode: Mode,
) -> Result<Tensor> {
    same_tape(x, gamma);
    same_tape(x, beta);
    let tape = x.tape.clone();
    let (shape, value, rg, mean, inv_std) = {
        let nodes = tape.nodes.borrow();
        let nx = &nodes[x.idx];
        let (ng, nb) = (&nodes[gamma.idx], &nodes[beta.idx]);
        if nx.shape.len() < 2 {
            return Err(Error::Shape(format!(
                "batch_norm needs a [N,C,..] input, got {:?}",
                nx.shape
            )));
        }
        let channels = nx.shape[1];
        if ng.value.len() != channels || nb.value.len() != channels {
            return Err(Error::Shape(format!(
                "batch_norm affine length {} does not match {channels} channels",
                ng.value.len()
            )));
        }
        if running.mean.len() != channels || running.var.len() != channels {
            return Err(Error::Shape(format!(
                "batch_norm running-stat length {} does not match {channels} channels",
                running.mean.len()
            )));
        }
        let batch = nx.shape[0];
        let spatial: usize = nx.shape[2..].iter().product();
        let m = batch * spatial;
        if m == 0 {
            return Err(Error::InvalidInput("batch_norm on an empty batch".into()));
        }

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let mut acc = 0.0;
                    for n in 0..batch {
                        let base = (n * channels + c) * spatial;
                        for v in &nx.value[base..base + spatial] {
                            acc += v;
                        }
                    }
                    mean[c] = acc / m as f64;
                    let mut acc2 = 0.0;
                    for n in 0..batch {
                        let base = (n * channels + c) * spatial;
                        for v in &nx.value[base..base + spatial] {
                            let d = v - mean[c];
                            acc2 += d * d;
                        }
                    }
                    var[c] = acc2 / m as f64;
                }
                for c in 0..channels {
                    running.mean[c] = BN_MOMENTUM * running.mean[c] + (1.0 - BN_MOMENTUM) * mean[c];
                    running.var[c] = BN_MOMENTUM * running.var[c] + (1.0 - BN_MOMENTUM) * var[c];
                }
                (mean, var)
            }
            Mode::Eval => (running.mean.clone(), running.var.clone()),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let mut out = vec![0.0; nx.value.len()];
        for n in 0..batch {
            for c in 0..channels {
                let base = (n * channels + c) * spatial;
                let (g, b, mu, is) = (ng.value[c], nb.value[c], mean[c], inv_std[c]);
                for (o, v) in out[base..base + spatial]
                    .iter_mut()
                    .zip(&nx.value[base..base + spatial])
                {
                    *o = g * (v - mu) * is + b;
                }
            }
        }
        let rg = nx.requires_grad || ng.requires_grad || nb.requires_grad;
        (nx.shape.clone(), out, rg, mean, inv_std)
    };
    Ok(tape.push(
        shape,
        value,
        rg,
        Op::BatchNorm {
            x: x.idx,
            gamma: gamma.idx,
            beta: beta.idx,
            mean,
            inv_std,
            through_stats: mode == Mode::Train,
        },
    ))
}

/// 2x2 average pooling with stride 2; trailing odd rows/columns are dropped.
pub fn avg_pool2d(x: &Tensor) -> Result<Tensor> {
    let tape = x.tape.clone();
    let (shape, value, rg) = {
        let nodes = tape.nodes.borrow();
        let n = &nodes[x.idx];
        if n.shape.len() != 4 {
            return Err(Error::Shape(format!(
                "avg_pool2d expects [N,C,H,W], got {:?}",
                n.shape
            )));
        }
        let (nb, c, h, w) = (n.shape[0], n.shape[1], n.shape[2], n.shape[3]);
        let (h2, w2) = (h / 2, w / 2);
        if h2 == 0 || w2 == 0 {
            return Err(Error::Shape(format!(
                "avg_pool2d input {h}x{w} too small for a 2x2 window"
            )));
        }
        let mut out = vec![0.0; nb * c * h2 * w2];
        for p in 0..nb * c {
            let src = &n.value[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for oh in 0..h2 {
                for ow in 0..w2 {
                    let (ih, iw) = (2 * oh, 2 * ow);
                    dst[oh * w2 + ow] = 0.25
                        * (src[ih * w + iw]
                            + src[ih * w + iw + 1]
                            + src[(ih + 1) * w + iw]
                            + src[(ih + 1) * w + iw + 1]);
                }
            }
        }
        (vec![nb, c, h2, w2], out, n.requires_grad)
    };
    Ok(tape.push(shape, value, rg, Op::AvgPool2d { x: x.idx }))
}

/// 2x2x2 average pooling with stride 2 over `[N,C,D,H,W]`.
pub fn avg_pool3d(x: &Tensor) -> Result<Tensor> {
    let tape = x.tape.clone();
    let (shape, value, rg) = {
        let nodes = tape.nodes.borrow();
        let n = &nodes[x.idx];
        if n.shape.len() != 5 {
            return Err(Error::Shape(format!(
                "avg_pool3d expects [N,C,D,H,W], got {:?}",
                n.shape
            )));
        }
        let (nb, c, d, h, w) = (n.shape[0], n.shape[1], n.shape[2], n.shape[3], n.shape[4]);
        let (d2, h2, w2) = (d / 2, h / 2, w / 2);
        if d2 == 0 || h2 == 0 || w2 == 0 {
            return Err(Error::Shape(format!(
                "avg_pool3d input {d}x{h}x{w} too small for a 2x2x2 window"
            )));
        }
        let mut out = vec![0.0; nb * c * d2 * h2 * w2];
        for p in 0..nb * c {
            let src = &n.value[p * d * h * w..(p + 1) * d * h * w];
            let dst = &mut out[p * d2 * h2 * w2..(p + 1) * d2 * h2 * w2];
            for od in 0..d2 {
                for oh in 0..h2 {
                    for ow in 0..w2 {
                        let (id, ih, iw) = (2 * od, 2 * oh, 2 * ow);
                        let mut acc = 0.0;
                        for dd in 0..2 {
                            for dh in 0..2 {
                                for dw in 0..2 {
                                    acc += src[((id + dd) * h + ih + dh) * w + iw + dw];
                                }
                            }
                        }
                        dst[(od * h2 + oh) * w2 + ow] = acc / 8.0;
                    }
                }
            }
        }
        (vec![nb, c, d2, h2, w2], out, n.requires_grad)
    };
    Ok(tape.push(shape, value, rg, Op::AvgPool3d { x: x.idx }))
}

/// Mean over every axis after the channel axis: `[N,C,..]` -> `[N,C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let tape = x.tape.clone();
    let (shape, value, rg) = {
        let nodes = tape.nodes.borrow();
        let n = &nodes[x.idx];
        if n.shape.len() < 3 {
            return Err(Error::Shape(format!(
                "global_avg_pool expects [N,C,..] with at least one reduced axis, got {:?}",
                n.shape
            )));
        }
        let (nb, c) = (n.shape[0], n.shape[1]);
        let spatial: usize = n.shape[2..].iter().product();
        let mut out = vec![0.0; nb * c];
        for p in 0..nb * c {
            let src = &n.value[p * spatial..(p + 1) * spatial];
            out[p] = src.iter().sum::<f64>() / spatial as f64;
        }
        (vec![nb, c], out, n.requires_grad)
    };
    Ok(tape.push(shape, value, rg, Op::GlobalAvgPool { x: x.idx }))
}

/// Fully connected layer: `[N,C] x [K,C] + [K] -> [N,K]`.
pub fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    same_tape(x, weight);
    same_tape(x, bias);
    let tape = x.tape.clone();
    let (shape, value, rg) = {
        let nodes = tape.nodes.borrow();
        let (nx, nw, nb) = (&nodes[x.idx], &nodes[weight.idx], &nodes[bias.idx]);
        if nx.shape.len() != 2 || nw.shape.len() != 2 || nb.shape.len() != 1 {
            return Err(Error::Shape(format!(
                "dense expects x [N,C], weight [K,C], bias [K], got {:?}, {:?}, {:?}",
                nx.shape, nw.shape, nb.shape
            )));
        }
        let (n, c) = (nx.shape[0], nx.shape[1]);
        let (k, wc) = (nw.shape[0], nw.shape[1]);
        if wc != c || nb.shape[0] != k {
            return Err(Error::Shape(format!(
                "dense dimension mismatch: x [N,{c}], weight [{k},{wc}], bias [{}]",
                nb.shape[0]
            )));
        }
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = &nx.value[i * c..(i + 1) * c];
            for j in 0..k {
                let wrow = &nw.value[j * c..(j + 1) * c];
                let mut acc = nb.value[j];
                for (xv, wv) in row.iter().zip(wrow) {
                    acc += xv * wv;
                }
                out[i * k + j] = acc;
            }
        }
        let rg = nx.requires_grad || nw.requires_grad || nb.requires_grad;
        (vec![n, k], out, rg)
    };
    Ok(tape.push(
        shape,
        value,
        rg,
        Op::Dense {
            x: x.idx,
            w: weight.idx,
            b: bias.idx,
        },
    ))
}

/// Concatenate along channel axis 1; all other extents must agree.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat_channels of zero tensors".into()))?;
    for p in parts {
        same_tape(first, p);
    }
    let tape = first.tape.clone();
    let (shape, value, rg) = {
        let nodes = tape.nodes.borrow();
        let base = &nodes[first.idx].shape;
        if base.len() < 2 {
            return Err(Error::Shape(format!(
                "concat_channels expects rank >= 2, got {base:?}"
            )));
        }
        let nb = base[0];
        let tail = &base[2..];
        let mut channels = 0;
        for p in parts {
            let s = &nodes[p.idx].shape;
            if s.len() != base.len() || s[0] != nb || &s[2..] != tail {
                return Err(Error::Shape(format!(
                    "concat_channels operand {s:?} incompatible with {base:?}"
                )));
            }
            channels += s[1];
        }
        let spatial: usize = tail.iter().product();
        let mut out = vec![0.0; nb * channels * spatial];
        for n in 0..nb {
            let mut at = 0;
            for p in parts {
                let node = &nodes[p.idx];
                let pc = node.shape[1];
                let src = &node.value[n * pc * spatial..(n + 1) * pc * spatial];
                out[(n * channels + at) * spatial..(n * channels + at + pc) * spatial]
                    .copy_from_slice(src);
                at += pc;
            }
        }
        let mut shape = base.clone();
        shape[1] = channels;
        let rg = parts.iter().any(|p| nodes[p.idx].requires_grad);
        (shape, out, rg)
    };
    Ok(tape.push(
        shape,
        value,
        rg,
        Op::ConcatChannels {
            parts: parts.iter().map(|p| p.idx).collect(),
        },
    ))
}

/// Class-weighted softmax cross-entropy over two-class logits.
///
/// `loss = mean_i weights[y_i] * (-ln softmax(logits_i)[y_i])`.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    class_weights: [f64; 2],
) -> Result<Tensor> {
    let tape = logits.tape.clone();
    let (value, probs, rg) = {
        let nodes = tape.nodes.borrow();
        let n = &nodes[logits.idx];
        if n.shape.len() != 2 || n.shape[1] != 2 {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy expects logits [N,2], got {:?}",
                n.shape
            )));
        }
        let batch = n.shape[0];
        if labels.len() != batch {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy has {batch} logit rows but {} labels",
                labels.len()
            )));
        }
        if class_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "class weights must be strictly positive, got {class_weights:?}"
            )));
        }
        let mut probs = vec![0.0; batch * 2];
        let mut loss = 0.0;
        for i in 0..batch {
            let y = labels[i];
            if y > 1 {
                return Err(Error::InvalidLabel { label: y });
            }
            let (a, b) = (n.value[2 * i], n.value[2 * i + 1]);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let z = ea + eb;
            probs[2 * i] = ea / z;
            probs[2 * i + 1] = eb / z;
            // -ln p[y] computed from logits directly for stability
            let logp = if y == 0 { a - m - z.ln() } else { b - m - z.ln() };
            loss -= class_weights[y] * logp;
        }
        loss /= batch as f64;
        (loss, probs, n.requires_grad)
    };
    Ok(tape.push(
        vec![1],
        vec![value],
        rg,
        Op::SoftmaxCrossEntropy {
            logits: logits.idx,
            labels: labels.to_vec(),
            weights: class_weights,
            probs,
        },
    ))
}

/// Add `contribution` into the adjoint slot, moving it when the slot is empty.
fn accumulate(adjoints: &mut [Option<Vec<f64>>], idx: usize, contribution: Vec<f64>) {
    match &mut adjoints[idx] {
        Some(slot) => {
            for (s, c) in slot.iter_mut().zip(&contribution) {
                *s += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// Propagate the adjoint of node `i` to its parents.
pub(super) fn propagate(nodes: &[Node], i: usize, adjoints: &mut [Option<Vec<f64>>]) {
    let adj = adjoints[i].take().expect("adjoint present for visited node");
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            for &p in [a, b].iter() {
                if nodes[*p].requires_grad {
                    accumulate(adjoints, *p, adj.clone());
                }
            }
        }
        Op::Mul { a, b } => {
            if nodes[*a].requires_grad {
                let da: Vec<f64> = adj.iter().zip(&nodes[*b].value).map(|(g, v)| g * v).collect();
                accumulate(adjoints, *a, da);
            }
            if nodes[*b].requires_grad {
                let db: Vec<f64> = adj.iter().zip(&nodes[*a].value).map(|(g, v)| g * v).collect();
                accumulate(adjoints, *b, db);
            }
        }
        Op::Scale { x, factor } => {
            if nodes[*x].requires_grad {
                accumulate(adjoints, *x, adj.iter().map(|g| g * factor).collect());
            }
        }
        Op::Sum { x } => {
            if nodes[*x].requires_grad {
                accumulate(adjoints, *x, vec![adj[0]; nodes[*x].value.len()]);
            }
        }
        Op::Relu { x } => {
            if nodes[*x].requires_grad {
                let dx: Vec<f64> = adj
                    .iter()
                    .zip(&nodes[*x].value)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(adjoints, *x, dx);
            }
        }
        Op::Conv2d { input, kernel, dims } => {
            if nodes[*input].requires_grad {
                let mut dinput = vec![0.0; nodes[*input].value.len()];
                conv::conv2d_dinput(dims, &nodes[*kernel].value, &adj, &mut dinput);
                accumulate(adjoints, *input, dinput);
            }
            if nodes[*kernel].requires_grad {
                let mut dkernel = vec![0.0; nodes[*kernel].value.len()];
                conv::conv2d_dkernel(dims, &nodes[*input].value, &adj, &mut dkernel);
                accumulate(adjoints, *kernel, dkernel);
            }
        }
        Op::Conv3d { input, kernel, dims } => {
            if nodes[*input].requires_grad {
                let mut dinput = vec![0.0; nodes[*input].value.len()];
                conv::conv3d_dinput(dims, &nodes[*kernel].value, &adj, &mut dinput);
                accumulate(adjoints, *input, dinput);
            }
            if nodes[*kernel].requires_grad {
                let mut dkernel = vec![0.0; nodes[*kernel].value.len()];
                conv::conv3d_dkernel(dims, &nodes[*input].value, &adj, &mut dkernel);
                accumulate(adjoints, *kernel, dkernel);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
            through_stats,
        } => {
            let nx = &nodes[*x];
            let channels = nx.shape[1];
            let batch = nx.shape[0];
            let spatial: usize = nx.shape[2..].iter().product();
            let m = (batch * spatial) as f64;
            let gv = &nodes[*gamma].value;

            if nodes[*gamma].requires_grad {
                let mut dgamma = vec![0.0; channels];
                for n in 0..batch {
                    for c in 0..channels {
                        let base = (n * channels + c) * spatial;
                        let (mu, is) = (mean[c], inv_std[c]);
                        let mut acc = 0.0;
                        for s in 0..spatial {
                            acc += adj[base + s] * (nx.value[base + s] - mu) * is;
                        }
                        dgamma[c] += acc;
                    }
                }
                accumulate(adjoints, *gamma, dgamma);
            }
            if nodes[*beta].requires_grad {
                let mut dbeta = vec![0.0; channels];
                for n in 0..batch {
                    for c in 0..channels {
                        let base = (n * channels + c) * spatial;
                        let mut acc = 0.0;
                        for s in 0..spatial {
                            acc += adj[base + s];
                        }
                        dbeta[c] += acc;
                    }
                }
                accumulate(adjoints, *beta, dbeta);
            }
            if nodes[*x].requires_grad {
                let mut dx = vec![0.0; nx.value.len()];
                if *through_stats {
                    // dL/dx = gamma*inv_std*(dy - mean(dy) - xhat*mean(dy*xhat))
                    let mut sum_dy = vec![0.0; channels];
                    let mut sum_dy_xhat = vec![0.0; channels];
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * spatial;
                            let (mu, is) = (mean[c], inv_std[c]);
                            for s in 0..spatial {
                                let g = adj[base + s];
                                sum_dy[c] += g;
                                sum_dy_xhat[c] += g * (nx.value[base + s] - mu) * is;
                            }
                        }
                    }
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * spatial;
                            let (mu, is) = (mean[c], inv_std[c]);
                            let coeff = gv[c] * is;
                            let (mdy, mdyx) = (sum_dy[c] / m, sum_dy_xhat[c] / m);
                            for s in 0..spatial {
                                let xhat = (nx.value[base + s] - mu) * is;
                                dx[base + s] = coeff * (adj[base + s] - mdy - xhat * mdyx);
                            }
                        }
                    }
                } else {
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * spatial;
                            let coeff = gv[c] * inv_std[c];
                            for s in 0..spatial {
                                dx[base + s] = coeff * adj[base + s];
                            }
                        }
                    }
                }
                accumulate(adjoints, *x, dx);
            }
        }
        Op::AvgPool2d { x } => {
            if nodes[*x].requires_grad {
                let nx = &nodes[*x];
                let (h, w) = (nx.shape[2], nx.shape[3]);
                let (h2, w2) = (h / 2, w / 2);
                let planes = nx.shape[0] * nx.shape[1];
                let mut dx = vec![0.0; nx.value.len()];
                for p in 0..planes {
                    let src = &adj[p * h2 * w2..(p + 1) * h2 * w2];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for oh in 0..h2 {
                        for ow in 0..w2 {
                            let g = src[oh * w2 + ow] * 0.25;
                            let (ih, iw) = (2 * oh, 2 * ow);
                            dst[ih * w + iw] += g;
                            dst[ih * w + iw + 1] += g;
                            dst[(ih + 1) * w + iw] += g;
                            dst[(ih + 1) * w + iw + 1] += g;
                        }
                    }
                }
                accumulate(adjoints, *x, dx);
            }
        }
        Op::AvgPool3d { x } => {
            if nodes[*x].requires_grad {
                let nx = &nodes[*x];
                let (d, h, w) = (nx.shape[2], nx.shape[3], nx.shape[4]);
                let (d2, h2, w2) = (d / 2, h / 2, w / 2);
                let planes = nx.shape[0] * nx.shape[1];
                let mut dx = vec![0.0; nx.value.len()];
                for p in 0..planes {
                    let src = &adj[p * d2 * h2 * w2..(p + 1) * d2 * h2 * w2];
                    let dst = &mut dx[p * d * h * w..(p + 1) * d * h * w];
                    for od in 0..d2 {
                        for oh in 0..h2 {
                            for ow in 0..w2 {
                                let g = src[(od * h2 + oh) * w2 + ow] / 8.0;
                                for dd in 0..2 {
                                    for dh in 0..2 {
                                        for dw in 0..2 {
                                            dst[((2 * od + dd) * h + 2 * oh + dh) * w
                                                + 2 * ow
                                                + dw] += g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(adjoints, *x, dx);
            }
        }
        Op::GlobalAvgPool { x } => {
            if nodes[*x].requires_grad {
                let nx = &nodes[*x];
                let spatial: usize = nx.shape[2..].iter().product();
                let planes = nx.shape[0] * nx.shape[1];
                let mut dx = vec![0.0; nx.value.len()];
                for p in 0..planes {
                    let g = adj[p] / spatial as f64;
                    for v in &mut dx[p * spatial..(p + 1) * spatial] {
                        *v = g;
                    }
                }
                accumulate(adjoints, *x, dx);
            }
        }
        Op::Dense { x, w, b } => {
            let (nx, nw) = (&nodes[*x], &nodes[*w]);
            let (n, c) = (nx.shape[0], nx.shape[1]);
            let k = nw.shape[0];
            if nodes[*x].requires_grad {
                let mut dx = vec![0.0; nx.value.len()];
                for i in 0..n {
                    for j in 0..k {
                        let g = adj[i * k + j];
                        let wrow = &nw.value[j * c..(j + 1) * c];
                        for (d, wv) in dx[i * c..(i + 1) * c].iter_mut().zip(wrow) {
                            *d += g * wv;
                        }
                    }
                }
                accumulate(adjoints, *x, dx);
            }
            if nodes[*w].requires_grad {
                let mut dw = vec![0.0; nw.value.len()];
                for i in 0..n {
                    let row = &nx.value[i * c..(i + 1) * c];
                    for j in 0..k {
                        let g = adj[i * k + j];
                        for (d, xv) in dw[j * c..(j + 1) * c].iter_mut().zip(row) {
                            *d += g * xv;
                        }
                    }
                }
                accumulate(adjoints, *w, dw);
            }
            if nodes[*b].requires_grad {
                let mut db = vec![0.0; k];
                for i in 0..n {
                    for j in 0..k {
                        db[j] += adj[i * k + j];
                    }
                }
                accumulate(adjoints, *b, db);
            }
        }
        Op::ConcatChannels { parts } => {
            let shape = &nodes[i].shape;
            let nb = shape[0];
            let channels = shape[1];
            let spatial: usize = shape[2..].iter().product();
            let mut at = 0;
            for &p in parts {
                let pc = nodes[p].shape[1];
                if nodes[p].requires_grad {
                    let mut dp = vec![0.0; nodes[p].value.len()];
                    for n in 0..nb {
                        let src = &adj[(n * channels + at) * spatial
                            ..(n * channels + at + pc) * spatial];
                        dp[n * pc * spatial..(n + 1) * pc * spatial].copy_from_slice(src);
                    }
                    accumulate(adjoints, p, dp);
                }
                at += pc;
            }
        }
        Op::SoftmaxCrossEntropy {
            logits,
            labels,
            weights,
            probs,
        } => {
            if nodes[*logits].requires_grad {
                let batch = labels.len();
                let g = adj[0] / batch as f64;
                let mut dl = vec![0.0; batch * 2];
                for i in 0..batch {
                    let y = labels[i];
                    let wy = weights[y];
                    for k in 0..2 {
                        let target = if k == y { 1.0 } else { 0.0 };
                        dl[2 * i + k] = g * wy * (probs[2 * i + k] - target);
                    }
                }
                accumulate(adjoints, *logits, dl);
            }
        }
    }
    adjoints[i] = Some(adj);
}
