//! Raw convolution kernels (cross-correlation convention, no kernel flip).
//!
//! The inner loops accumulate along contiguous rows in a fixed order, so the
//! results are bit-deterministic; parallelism only ever splits over disjoint
//! output partitions.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Conv2dDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Conv3dDims {
    pub n: usize,
    pub c_in: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub d_out: usize,
    pub h_out: usize,
    pub w_out: usize,
}

fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k > input + 2 * pad {
        return Err(Error::Shape(format!(
            "kernel extent {k} exceeds padded input extent {}",
            input + 2 * pad
        )));
    }
    Ok((input + 2 * pad - k) / stride + 1)
}

/// Range of output positions `o` with `0 <= o*stride + k - pad < input`.
#[inline]
fn valid_out_range(k: usize, pad: usize, stride: usize, input: usize, out: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if input + pad > k {
        ((input + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

pub fn conv2d_dims(
    input_shape: &[usize],
    kernel_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Conv2dDims> {
    if input_shape.len() != 4 || kernel_shape.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects input [N,C,H,W] and kernel [F,C,kH,kW], got {input_shape:?} and {kernel_shape:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d stride must be >= 1".into()));
    }
    let (n, c_in, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (f, kc, kh, kw) = (kernel_shape[0], kernel_shape[1], kernel_shape[2], kernel_shape[3]);
    if kc != c_in {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {c_in} channels, kernel expects {kc}"
        )));
    }
    Ok(Conv2dDims {
        n,
        c_in,
        h,
        w,
        f,
        kh,
        kw,
        stride,
        pad,
        h_out: out_extent(h, kh, stride, pad)?,
        w_out: out_extent(w, kw, stride, pad)?,
    })
}

pub fn conv3d_dims(
    input_shape: &[usize],
    kernel_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Conv3dDims> {
    if input_shape.len() != 5 || kernel_shape.len() != 5 {
        return Err(Error::Shape(format!(
            "conv3d expects input [N,C,D,H,W] and kernel [F,C,kD,kH,kW], got {input_shape:?} and {kernel_shape:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv3d stride must be >= 1".into()));
    }
    let (n, c_in, d, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
        input_shape[4],
    );
    let (f, kc, kd, kh, kw) = (
        kernel_shape[0],
        kernel_shape[1],
        kernel_shape[2],
        kernel_shape[3],
        kernel_shape[4],
    );
    if kc != c_in {
        return Err(Error::Shape(format!(
            "conv3d channel mismatch: input has {c_in} channels, kernel expects {kc}"
        )));
    }
    Ok(Conv3dDims {
        n,
        c_in,
        d,
        h,
        w,
        f,
        kd,
        kh,
        kw,
        stride,
        pad,
        d_out: out_extent(d, kd, stride, pad)?,
        h_out: out_extent(h, kh, stride, pad)?,
        w_out: out_extent(w, kw, stride, pad)?,
    })
}

/// `out_row[lo..hi] += coeff * in_row[...]`, the shared innermost step.
#[inline]
fn accumulate_row(
    out_row: &mut [f64],
    in_row: &[f64],
    coeff: f64,
    lo: usize,
    hi: usize,
    k: usize,
    pad: usize,
    stride: usize,
) {
    if stride == 1 {
        let off = lo + k - pad; // in-bounds by construction of (lo, hi)
        for (o, i) in out_row[lo..hi].iter_mut().zip(&in_row[off..off + (hi - lo)]) {
            *o += coeff * i;
        }
    } else {
        for ow in lo..hi {
            out_row[ow] += coeff * in_row[ow * stride + k - pad];
        }
    }
}

/// Dot product of an output-gradient row against the matching input window.
#[inline]
fn correlate_row(
    dout_row: &[f64],
    in_row: &[f64],
    lo: usize,
    hi: usize,
    k: usize,
    pad: usize,
    stride: usize,
) -> f64 {
    let mut acc = 0.0;
    if stride == 1 {
        let off = lo + k - pad;
        for (o, i) in dout_row[lo..hi].iter().zip(&in_row[off..off + (hi - lo)]) {
            acc += o * i;
        }
    } else {
        for ow in lo..hi {
            acc += dout_row[ow] * in_row[ow * stride + k - pad];
        }
    }
    acc
}

pub fn conv2d_forward(d: &Conv2dDims, input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let in_plane = d.h * d.w;
    let out_plane = d.h_out * d.w_out;
    let (wlo, whi) = (0..d.kw)
        .map(|kw| valid_out_range(kw, d.pad, d.stride, d.w, d.w_out))
        .fold((vec![], vec![]), |mut acc, (lo, hi)| {
            acc.0.push(lo);
            acc.1.push(hi);
            acc
        });

    out.par_chunks_mut(out_plane).enumerate().for_each(|(nf, out_p)| {
        let (ni, fi) = (nf / d.f, nf % d.f);
        let sample = &input[ni * d.c_in * in_plane..(ni + 1) * d.c_in * in_plane];
        for c in 0..d.c_in {
            let chan = &sample[c * in_plane..(c + 1) * in_plane];
            for kh in 0..d.kh {
                let (oh_lo, oh_hi) = valid_out_range(kh, d.pad, d.stride, d.h, d.h_out);
                for kw in 0..d.kw {
                    let coeff = kernel[((fi * d.c_in + c) * d.kh + kh) * d.kw + kw];
                    if coeff == 0.0 {
                        continue;
                    }
                    for oh in oh_lo..oh_hi {
                        let ih = oh * d.stride + kh - d.pad;
                        accumulate_row(
                            &mut out_p[oh * d.w_out..(oh + 1) * d.w_out],
                            &chan[ih * d.w..(ih + 1) * d.w],
                            coeff,
                            wlo[kw],
                            whi[kw],
                            kw,
                            d.pad,
                            d.stride,
                        );
                    }
                }
            }
        }
    });
}

pub fn conv2d_dinput(d: &Conv2dDims, kernel: &[f64], dout: &[f64], dinput: &mut [f64]) {
    let in_plane = d.h * d.w;
    let out_plane = d.h_out * d.w_out;

    dinput.par_chunks_mut(in_plane).enumerate().for_each(|(nc, din_p)| {
        let (ni, c) = (nc / d.c_in, nc % d.c_in);
        let dout_s = &dout[ni * d.f * out_plane..(ni + 1) * d.f * out_plane];
        for f in 0..d.f {
            let dout_c = &dout_s[f * out_plane..(f + 1) * out_plane];
            for kh in 0..d.kh {
                let (oh_lo, oh_hi) = valid_out_range(kh, d.pad, d.stride, d.h, d.h_out);
                for kw in 0..d.kw {
                    let coeff = kernel[((f * d.c_in + c) * d.kh + kh) * d.kw + kw];
                    if coeff == 0.0 {
                        continue;
                    }
                    let (ow_lo, ow_hi) = valid_out_range(kw, d.pad, d.stride, d.w, d.w_out);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * d.stride + kh - d.pad;
                        // Reversed roles: scatter dout into the input row.
                        let din_row = &mut din_p[ih * d.w..(ih + 1) * d.w];
                        let dout_row = &dout_c[oh * d.w_out..(oh + 1) * d.w_out];
                        if d.stride == 1 {
                            let off = ow_lo + kw - d.pad;
                            for (i, o) in din_row[off..off + (ow_hi - ow_lo)]
                                .iter_mut()
                                .zip(&dout_row[ow_lo..ow_hi])
                            {
                                *i += coeff * o;
                            }
                        } else {
                            for ow in ow_lo..ow_hi {
                                din_row[ow * d.stride + kw - d.pad] += coeff * dout_row[ow];
                            }
                        }
                    }
                }
            }
        }
    });
}

pub fn conv2d_dkernel(d: &Conv2dDims, input: &[f64], dout: &[f64], dkernel: &mut [f64]) {
    let in_plane = d.h * d.w;
    let out_plane = d.h_out * d.w_out;
    let ktail = d.kh * d.kw;

    dkernel.par_chunks_mut(ktail).enumerate().for_each(|(fc, dk)| {
        let (f, c) = (fc / d.c_in, fc % d.c_in);
        for kh in 0..d.kh {
            let (oh_lo, oh_hi) = valid_out_range(kh, d.pad, d.stride, d.h, d.h_out);
            for kw in 0..d.kw {
                let (ow_lo, ow_hi) = valid_out_range(kw, d.pad, d.stride, d.w, d.w_out);
                let mut acc = 0.0;
                for ni in 0..d.n {
                    let chan = &input[(ni * d.c_in + c) * in_plane..(ni * d.c_in + c + 1) * in_plane];
                    let dout_c = &dout[(ni * d.f + f) * out_plane..(ni * d.f + f + 1) * out_plane];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * d.stride + kh - d.pad;
                        acc += correlate_row(
                            &dout_c[oh * d.w_out..(oh + 1) * d.w_out],
                            &chan[ih * d.w..(ih + 1) * d.w],
                            ow_lo,
                            ow_hi,
                            kw,
                            d.pad,
                            d.stride,
                        );
                    }
                }
                dk[kh * d.kw + kw] += acc;
            }
        }
    });
}

pub fn conv3d_forward(d: &Conv3dDims, input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let in_vol = d.d * d.h * d.w;
    let out_vol = d.d_out * d.h_out * d.w_out;

    out.par_chunks_mut(out_vol).enumerate().for_each(|(nf, out_v)| {
        let (ni, fi) = (nf / d.f, nf % d.f);
        let sample = &input[ni * d.c_in * in_vol..(ni + 1) * d.c_in * in_vol];
        for c in 0..d.c_in {
            let chan = &sample[c * in_vol..(c + 1) * in_vol];
            for kd in 0..d.kd {
                let (od_lo, od_hi) = valid_out_range(kd, d.pad, d.stride, d.d, d.d_out);
                for kh in 0..d.kh {
                    let (oh_lo, oh_hi) = valid_out_range(kh, d.pad, d.stride, d.h, d.h_out);
                    for kw in 0..d.kw {
                        let coeff =
                            kernel[(((fi * d.c_in + c) * d.kd + kd) * d.kh + kh) * d.kw + kw];
                        if coeff == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_out_range(kw, d.pad, d.stride, d.w, d.w_out);
                        for od in od_lo..od_hi {
                            let id = od * d.stride + kd - d.pad;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * d.stride + kh - d.pad;
                                accumulate_row(
                                    &mut out_v[(od * d.h_out + oh) * d.w_out
                                        ..(od * d.h_out + oh + 1) * d.w_out],
                                    &chan[(id * d.h + ih) * d.w..(id * d.h + ih + 1) * d.w],
                                    coeff,
                                    ow_lo,
                                    ow_hi,
                                    kw,
                                    d.pad,
                                    d.stride,
                                );
                            }
                        }
                    }
                }
            }
        }
    });
}

pub fn conv3d_dinput(d: &Conv3dDims, kernel: &[f64], dout: &[f64], dinput: &mut [f64]) {
    let in_vol = d.d * d.h * d.w;
    let out_vol = d.d_out * d.h_out * d.w_out;

    dinput.par_chunks_mut(in_vol).enumerate().for_each(|(nc, din_v)| {
        let (ni, c) = (nc / d.c_in, nc % d.c_in);
        let dout_s = &dout[ni * d.f * out_vol..(ni + 1) * d.f * out_vol];
        for f in 0..d.f {
            let dout_c = &dout_s[f * out_vol..(f + 1) * out_vol];
            for kd in 0..d.kd {
                let (od_lo, od_hi) = valid_out_range(kd, d.pad, d.stride, d.d, d.d_out);
                for kh in 0..d.kh {
                    let (oh_lo, oh_hi) = valid_out_range(kh, d.pad, d.stride, d.h, d.h_out);
                    for kw in 0..d.kw {
                        let coeff =
                            kernel[(((f * d.c_in + c) * d.kd + kd) * d.kh + kh) * d.kw + kw];
                        if coeff == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_out_range(kw, d.pad, d.stride, d.w, d.w_out);
                        for od in od_lo..od_hi {
                            let id = od * d.stride + kd - d.pad;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * d.stride + kh - d.pad;
                                let din_row = &mut din_v
                                    [(id * d.h + ih) * d.w..(id * d.h + ih + 1) * d.w];
                                let dout_row = &dout_c[(od * d.h_out + oh) * d.w_out
                                    ..(od * d.h_out + oh + 1) * d.w_out];
                                if d.stride == 1 {
                                    let off = ow_lo + kw - d.pad;
                                    for (i, o) in din_row[off..off + (ow_hi - ow_lo)]
                                        .iter_mut()
                                        .zip(&dout_row[ow_lo..ow_hi])
                                    {
                                        *i += coeff * o;
                                    }
                                } else {
                                    for ow in ow_lo..ow_hi {
                                        din_row[ow * d.stride + kw - d.pad] +=
                                            coeff * dout_row[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

pub fn conv3d_dkernel(d: &Conv3dDims, input: &[f64], dout: &[f64], dkernel: &mut [f64]) {
    let in_vol = d.d * d.h * d.w;
    let out_vol = d.d_out * d.h_out * d.w_out;
    let ktail = d.kd * d.kh * d.kw;

    dkernel.par_chunks_mut(ktail).enumerate().for_each(|(fc, dk)| {
        let (f, c) = (fc / d.c_in, fc % d.c_in);
        for kd in 0..d.kd {
            let (od_lo, od_hi) = valid_out_range(kd, d.pad, d.stride, d.d, d.d_out);
            for kh in 0..d.kh {
                let (oh_lo, oh_hi) = valid_out_range(kh, d.pad, d.stride, d.h, d.h_out);
                for kw in 0..d.kw {
                    let (ow_lo, ow_hi) = valid_out_range(kw, d.pad, d.stride, d.w, d.w_out);
                    let mut acc = 0.0;
                    for ni in 0..d.n {
                        let chan =
                            &input[(ni * d.c_in + c) * in_vol..(ni * d.c_in + c + 1) * in_vol];
                        let dout_c =
                            &dout[(ni * d.f + f) * out_vol..(ni * d.f + f + 1) * out_vol];
                        for od in od_lo..od_hi {
                            let id = od * d.stride + kd - d.pad;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * d.stride + kh - d.pad;
                                acc += correlate_row(
                                    &dout_c[(od * d.h_out + oh) * d.w_out
                                        ..(od * d.h_out + oh + 1) * d.w_out],
                                    &chan[(id * d.h + ih) * d.w..(id * d.h + ih + 1) * d.w],
                                    ow_lo,
                                    ow_hi,
                                    kw,
                                    d.pad,
                                    d.stride,
                                );
                            }
                        }
                    }
                    dk[(kd * d.kh + kh) * d.kw + kw] += acc;
                }
            }
        }
    });
}
