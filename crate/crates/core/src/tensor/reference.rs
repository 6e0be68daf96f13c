//! Direct-loop reference kernels.
//!
//! Deliberately naive translations of the convolution definition, kept free
//! of the layout tricks and parallel partitioning the production kernels in
//! this module use. Tests compare the two routes; nothing here is shared
//! with the fast path.

/// Cross-correlation of `[N,C,H,W]` input with `[F,C,kH,kW]` kernel.
///
/// Returns the output values and their `[N,F,H',W']` shape. Panics on
/// malformed shapes; validation belongs to the production path.
pub fn conv2d_reference(
    input: &[f64],
    in_shape: [usize; 4],
    kernel: &[f64],
    k_shape: [usize; 4],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = in_shape;
    let [f, kc, kh, kw] = k_shape;
    assert_eq!(c, kc);
    assert_eq!(input.len(), n * c * h * w);
    assert_eq!(kernel.len(), f * c * kh * kw);
    let h_out = (h + 2 * pad - kh) / stride + 1;
    let w_out = (w + 2 * pad - kw) / stride + 1;

    let mut out = vec![0.0; n * f * h_out * w_out];
    for bn in 0..n {
        for bf in 0..f {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = 0.0;
                    for bc in 0..c {
                        for dh in 0..kh {
                            for dw in 0..kw {
                                let ih = (oh * stride + dh) as isize - pad as isize;
                                let iw = (ow * stride + dw) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                let iv = input
                                    [((bn * c + bc) * h + ih as usize) * w + iw as usize];
                                let kv = kernel[((bf * c + bc) * kh + dh) * kw + dw];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((bn * f + bf) * h_out + oh) * w_out + ow] = acc;
                }
            }
        }
    }
    (out, [n, f, h_out, w_out])
}

/// Cross-correlation of `[N,C,D,H,W]` input with `[F,C,kD,kH,kW]` kernel.
pub fn conv3d_reference(
    input: &[f64],
    in_shape: [usize; 5],
    kernel: &[f64],
    k_shape: [usize; 5],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 5]) {
    let [n, c, d, h, w] = in_shape;
    let [f, kc, kd, kh, kw] = k_shape;
    assert_eq!(c, kc);
    assert_eq!(input.len(), n * c * d * h * w);
    assert_eq!(kernel.len(), f * c * kd * kh * kw);
    let d_out = (d + 2 * pad - kd) / stride + 1;
    let h_out = (h + 2 * pad - kh) / stride + 1;
    let w_out = (w + 2 * pad - kw) / stride + 1;

    let mut out = vec![0.0; n * f * d_out * h_out * w_out];
    for bn in 0..n {
        for bf in 0..f {
            for od in 0..d_out {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let mut acc = 0.0;
                        for bc in 0..c {
                            for dd in 0..kd {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let id = (od * stride + dd) as isize - pad as isize;
                                        let ih = (oh * stride + dh) as isize - pad as isize;
                                        let iw = (ow * stride + dw) as isize - pad as isize;
                                        if id < 0
                                            || ih < 0
                                            || iw < 0
                                            || id >= d as isize
                                            || ih >= h as isize
                                            || iw >= w as isize
                                        {
                                            continue;
                                        }
                                        let iv = input[(((bn * c + bc) * d + id as usize) * h
                                            + ih as usize)
                                            * w
                                            + iw as usize];
                                        let kv = kernel
                                            [(((bf * c + bc) * kd + dd) * kh + dh) * kw + dw];
                                        acc += iv * kv;
                                    }
                                }
                            }
                        }
                        out[(((bn * f + bf) * d_out + od) * h_out + oh) * w_out + ow] = acc;
                    }
                }
            }
        }
    }
    (out, [n, f, d_out, h_out, w_out])
}
