use rayon::prelude::*;

use super::{pad_mirror, FilterParams};
use crate::error::{Error, Result};
use crate::image::Image;

/// Per-pixel window mean and population variance.
#[derive(Debug, Clone)]
pub struct LocalStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl LocalStats {
    /// Squared coefficient of variation `Cy² = s² / m²`, zero where `m = 0`.
    #[inline]
    pub fn cy2(&self, i: usize) -> f64 {
        let m = self.mean[i];
        if m > 0.0 {
            self.var[i] / (m * m)
        } else {
            0.0
        }
    }
}

pub fn local_stats(img: &Image, radius: usize) -> LocalStats {
    let (w, h) = img.dims();
    let (padded, pw) = pad_mirror(img, radius);
    let side = 2 * radius + 1;
    let n = (side * side) as f64;

    // horizontal window sums of x and x² over every padded row
    let rows = h + 2 * radius;
    let mut hs = vec![0.0; rows * w];
    let mut hq = vec![0.0; rows * w];
    hs.par_chunks_mut(w)
        .zip(hq.par_chunks_mut(w))
        .enumerate()
        .for_each(|(py, (s_row, q_row))| {
            let src = &padded[py * pw..(py + 1) * pw];
            for x in 0..w {
                let win = &src[x..x + side];
                s_row[x] = win.iter().sum();
                q_row[x] = win.iter().map(|v| v * v).sum();
            }
        });

    let mut mean = vec![0.0; w * h];
    let mut var = vec![0.0; w * h];
    mean.par_chunks_mut(w)
        .zip(var.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (m_row, v_row))| {
            for x in 0..w {
                let mut s = 0.0;
                let mut q = 0.0;
                for k in 0..side {
                    s += hs[(y + k) * w + x];
                    q += hq[(y + k) * w + x];
                }
                let m = s / n;
                m_row[x] = m;
                v_row[x] = (q / n - m * m).max(0.0);
            }
        });
    LocalStats { mean, var }
}

fn adaptive_gain(img: &Image, params: &FilterParams, gain: impl Fn(f64, f64) -> f64 + Sync) -> Result<Image> {
    params.validate()?;
    let stats = local_stats(img, params.window_radius);
    let cn2 = params.noise_cv * params.noise_cv;
    let data: Vec<f64> = img
        .data()
        .par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let m = stats.mean[i];
            let cy2 = stats.cy2(i);
            let k = if cy2 > 0.0 {
                gain(cn2, cy2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            m + k * (y - m)
        })
        .collect();
    Ok(Image::from_raw(img.width(), img.height(), data))
}

pub fn lee(img: &Image, params: &FilterParams) -> Result<Image> {
    adaptive_gain(img, params, |cn2, cy2| 1.0 - cn2 / cy2)
}

pub fn kuan(img: &Image, params: &FilterParams) -> Result<Image> {
    adaptive_gain(img, params, |cn2, cy2| (1.0 - cn2 / cy2) / (1.0 + cn2))
}

pub fn frost(img: &Image, params: &FilterParams) -> Result<Image> {
    params.validate()?;
    let r = params.window_radius;
    let (w, h) = img.dims();
    let stats = local_stats(img, r);
    let (padded, pw) = pad_mirror(img, r);
    let side = 2 * r + 1;
    let dist: Vec<f64> = (0..side * side)
        .map(|k| {
            let dx = (k % side) as f64 - r as f64;
            let dy = (k / side) as f64 - r as f64;
            (dx * dx + dy * dy).sqrt()
        })
        .collect();
    let damping = params.frost_damping;

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let a = damping * stats.cy2(y * w + x);
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in 0..side {
                let src = &padded[(y + dy) * pw + x..(y + dy) * pw + x + side];
                for (dx, &v) in src.iter().enumerate() {
                    let d = dist[dy * side + dx];
                    // explicit centre weight keeps inf·0 out of the kernel
                    let wt = if d == 0.0 { 1.0 } else { (-a * d).exp() };
                    num += wt * v;
                    den += wt;
                }
            }
            *o = num / den;
        }
    });
    Ok(Image::from_raw(w, h, out))
}

/// Median of the local `Cy` over windows with positive mean.
///
/// Fallback estimate of `Cn` when the speckle level is unknown.
pub fn estimate_noise_cv(img: &Image, radius: usize) -> Result<f64> {
    if radius < 1 {
        return Err(Error::InvalidParameter("window radius must be at least 1".into()));
    }
    let stats = local_stats(img, radius);
    let mut cy: Vec<f64> = (0..img.len())
        .filter(|&i| stats.mean[i] > 0.0)
        .map(|i| stats.cy2(i).sqrt())
        .collect();
    if cy.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot estimate noise level of an all-zero image".into(),
        ));
    }
    let mid = cy.len() / 2;
    let (_, m, _) = cy.select_nth_unstable_by(mid, f64::total_cmp);
    let med = *m;
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::InvalidParameter(
            "estimated noise level is zero (image is locally constant)".into(),
        ))
    }
}
