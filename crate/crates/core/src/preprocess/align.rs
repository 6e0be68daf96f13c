//! Integer-translation band registration.
//!
//! Each band is compared against band 0 under every translation in a ±8 px
//! window; the shift with the highest normalized cross-correlation over the
//! overlap wins. Ties prefer the smallest displacement so an already-aligned
//! cube is a fixed point. Sub-pixel and rotational motion are out of scope;
//! phantom misalignment is purely translational.

use crate::error::{Error, Result};

use super::Volume;

/// Search radius in pixels.
const SEARCH: isize = 8;

/// Result of aligning a volume against its first band.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub volume: Volume,
    /// Per-band applied translation `(rows, cols)`; band 0 is always (0,0).
    pub shifts: Vec<(isize, isize)>,
    /// Bands skipped because they (or the reference) carry no variance.
    pub skipped: Vec<usize>,
}

fn variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / xs.len() as f64
}

/// NCC between the reference band and `band` moved by `(sy,sx)`, scored over
/// the in-frame overlap only. `None` when either side is constant there.
fn ncc(reference: &[f64], band: &[f64], h: usize, w: usize, sy: isize, sx: isize) -> Option<f64> {
    let r0 = sy.max(0) as usize;
    let r1 = (h as isize + sy.min(0)) as usize;
    let c0 = sx.max(0) as usize;
    let c1 = (w as isize + sx.min(0)) as usize;
    if r0 >= r1 || c0 >= c1 {
        return None;
    }
    let n = ((r1 - r0) * (c1 - c0)) as f64;

    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for r in r0..r1 {
        for c in c0..c1 {
            sum_a += reference[r * w + c];
            sum_b += band[((r as isize - sy) as usize) * w + (c as isize - sx) as usize];
        }
    }
    let mean_a = sum_a / n;
    let mean_b = sum_b / n;

    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for r in r0..r1 {
        for c in c0..c1 {
            let a = reference[r * w + c] - mean_a;
            let b = band[((r as isize - sy) as usize) * w + (c as isize - sx) as usize] - mean_b;
            cov += a * b;
            var_a += a * a;
            var_b += b * b;
        }
    }
    if var_a <= 0.0 || var_b <= 0.0 {
        return None;
    }
    Some(cov / (var_a * var_b).sqrt())
}

/// Register every band to band 0 by integer translation, edge-replicating
/// out-of-frame pixels. Annotations are unaffected: masks live in the
/// reference frame.
pub fn align_bands(volume: &Volume) -> Result<Alignment> {
    if volume.bands < 2 {
        return Err(Error::InvalidInput(format!(
            "alignment needs at least 2 bands, got {}",
            volume.bands
        )));
    }
    let (h, w) = (volume.height, volume.width);
    let reference = volume.plane(0);
    let ref_var = variance(reference);

    let mut out = volume.clone();
    let mut shifts = vec![(0isize, 0isize); volume.bands];
    let mut skipped = Vec::new();

    for b in 1..volume.bands {
        let band = volume.plane(b);
        let band_var = variance(band);
        if ref_var <= 0.0 || band_var <= 0.0 {
            log::warn!("band {b}: constant plane, alignment skipped");
            skipped.push(b);
            continue;
        }

        let mut best: Option<((isize, isize), f64)> = None;
        for sy in -SEARCH..=SEARCH {
            for sx in -SEARCH..=SEARCH {
                let Some(score) = ncc(reference, band, h, w, sy, sx) else {
                    continue;
                };
                let better = match best {
                    None => true,
                    Some((cur, cur_score)) => {
                        score > cur_score + 1e-12
                            || ((score - cur_score).abs() <= 1e-12
                                && (sy.abs() + sx.abs(), sy, sx)
                                    < (cur.0.abs() + cur.1.abs(), cur.0, cur.1))
                    }
                };
                if better {
                    best = Some(((sy, sx), score));
                }
            }
        }
        let Some(((sy, sx), _)) = best else {
            log::warn!("band {b}: no valid correlation window, alignment skipped");
            skipped.push(b);
            continue;
        };
        shifts[b] = (sy, sx);
        if (sy, sx) != (0, 0) {
            let plane = out.plane_mut(b);
            for r in 0..h {
                for c in 0..w {
                    let src_r = (r as isize - sy).clamp(0, h as isize - 1) as usize;
                    let src_c = (c as isize - sx).clamp(0, w as isize - 1) as usize;
                    plane[r * w + c] = band[src_r * w + src_c];
                }
            }
        }
    }

    Ok(Alignment { volume: out, shifts, skipped })
}
