//! Single-pass probabilistic patch-based filter (`ppb_lite`).
//!
//! Weighted average over a `(2S+1)²` search window:
//!
//! ```text
//! out(p) = Σ_q y(q) w(p,q) / Σ_q w(p,q)
//! w(p,q) = exp(−(1/h) Σ_t log((a(p+t)/a(q+t) + a(q+t)/a(p+t)) / 2))
//! ```
//!
//! with `a = √max(y, ε)` and `t` ranging over a `(2R+1)²` patch. The log term
//! is the generalized likelihood ratio of two amplitude samples sharing one
//! reflectivity; it is zero for equal samples, so `w(p,p) = 1`. Unlike the
//! full PPB algorithm there is no refinement pass using a previous estimate.
//!
//! For each search offset the per-pixel dissimilarity is computed once and
//! box-summed over the patch, so the cost is `O(N · (2S+1)²)` instead of
//! `O(N · (2S+1)² · (2R+1)²)`.

use rayon::prelude::*;

use super::{pad_mirror, FilterParams};
use crate::error::Result;
use crate::image::Image;

/// Intensity floor applied before amplitude ratios.
pub const PPB_FLOOR: f64 = 1e-6;

const STRIP_ROWS: usize = 32;

/// `log((a/b + b/a) / 2)` for amplitudes `a, b > 0`.
#[inline]
fn glr(a: f64, b: f64) -> f64 {
    ((a * a + b * b) / (2.0 * a * b)).ln()
}

/// Patch dissimilarity `Σ_t log((a/b + b/a)/2)` between the patches of
/// radius `radius` centred at `p` and `q`, with mirror boundaries.
pub fn patch_dissimilarity(img: &Image, p: (usize, usize), q: (usize, usize), radius: usize) -> f64 {
    let (w, h) = img.dims();
    let amp = |x: isize, y: isize| {
        img.get(super::mirror(x, w), super::mirror(y, h))
            .max(PPB_FLOOR)
            .sqrt()
    };
    let r = radius as isize;
    let mut sum = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let a = amp(p.0 as isize + dx, p.1 as isize + dy);
            let b = amp(q.0 as isize + dx, q.1 as isize + dy);
            sum += glr(a, b);
        }
    }
    sum
}

pub fn ppb_lite(img: &Image, params: &FilterParams) -> Result<Image> {
    params.validate()?;
    let (w, h) = img.dims();
    let r = params.ppb.patch_radius;
    let s = params.ppb.search_radius;
    let inv_h = 1.0 / params.ppb.h;
    let pad = r + s;
    let (values, pw) = pad_mirror(img, pad);
    let amps: Vec<f64> = values.iter().map(|&v| v.max(PPB_FLOOR).sqrt()).collect();
    let side = 2 * r + 1;
    let dw = w + 2 * r;

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(STRIP_ROWS * w)
        .enumerate()
        .for_each(|(strip, dst)| {
            let y0 = strip * STRIP_ROWS;
            let rows = dst.len() / w;
            let drows = rows + 2 * r;
            let mut diss = vec![0.0; drows * dw];
            let mut hsum = vec![0.0; drows * w];
            let mut num = vec![0.0; rows * w];
            let mut den = vec![0.0; rows * w];

            for oy in -(s as isize)..=s as isize {
                for ox in -(s as isize)..=s as isize {
                    // dissimilarity map over the strip plus a patch-radius halo;
                    // row j, column i is image pixel (i − r, y0 + j − r)
                    for j in 0..drows {
                        let py = y0 + j + s; // padded row of p
                        let qy = (py as isize + oy) as usize;
                        let prow = &amps[py * pw + s..py * pw + s + dw];
                        let qstart = (qy as isize * pw as isize + s as isize + ox) as usize;
                        let qrow = &amps[qstart..qstart + dw];
                        for ((d, &a), &b) in diss[j * dw..(j + 1) * dw].iter_mut().zip(prow).zip(qrow) {
                            *d = glr(a, b);
                        }
                    }
                    for j in 0..drows {
                        let src = &diss[j * dw..(j + 1) * dw];
                        let dst_row = &mut hsum[j * w..(j + 1) * w];
                        let mut acc: f64 = src[..side].iter().sum();
                        dst_row[0] = acc;
                        for x in 1..w {
                            acc += src[x + side - 1] - src[x - 1];
                            dst_row[x] = acc;
                        }
                    }
                    for y in 0..rows {
                        let qy = (y0 + y + pad) as isize + oy;
                        let qbase = (qy * pw as isize + pad as isize + ox) as usize;
                        let qvals = &values[qbase..qbase + w];
                        for x in 0..w {
                            let mut patch = 0.0;
                            for k in 0..side {
                                patch += hsum[(y + k) * w + x];
                            }
                            // clamp tiny negative drift from the running sums
                            let wt = (-patch.max(0.0) * inv_h).exp();
                            num[y * w + x] += wt * qvals[x];
                            den[y * w + x] += wt;
                        }
                    }
                }
            }
            for ((o, n), d) in dst.iter_mut().zip(&num).zip(&den) {
                *o = n / d;
            }
        });
    Ok(Image::from_raw(w, h, out))
}
