use crate::error::{Error, Result};
use crate::image::Image;

/// SSIM window side.
pub const SSIM_WINDOW: usize = 11;
/// SSIM Gaussian standard deviation.
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_range(data_range: f64) -> Result<()> {
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "data range must be positive, got {data_range}"
        )));
    }
    Ok(())
}

/// Mean squared error between two images of equal shape.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(range² / MSE)` in dB; `+∞` when the images are identical.
pub fn psnr(reference: &Image, test: &Image, data_range: f64) -> Result<f64> {
    check_range(data_range)?;
    let err = mse(reference, test)?;
    Ok(psnr_from_mse(err, data_range))
}

pub fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    }
}

/// Normalized 1-D Gaussian taps for the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|t| *t /= s);
    g
}

/// Separable "valid" filtering: output is `(w-10)×(h-10)`.
fn gaussian_valid(data: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[x + k];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (k, t) in taps.iter().enumerate() {
            let src = &horiz[(y + k) * ow..(y + k + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    out
}

/// Local SSIM values over every fully contained 11×11 Gaussian window.
pub fn ssim_map(reference: &Image, test: &Image, data_range: f64) -> Result<Vec<f64>> {
    check_range(data_range)?;
    reference.check_same_shape(test)?;
    let (w, h) = reference.dims();
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: SSIM_WINDOW,
        });
    }
    let c1 = (K1 * data_range).powi(2);
    let c2 = (K2 * data_range).powi(2);
    let taps = ssim_taps();
    let x = reference.data();
    let y = test.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mu_x = gaussian_valid(x, w, h, &taps);
    let mu_y = gaussian_valid(y, w, h, &taps);
    let e_xx = gaussian_valid(&xx, w, h, &taps);
    let e_yy = gaussian_valid(&yy, w, h, &taps);
    let e_xy = gaussian_valid(&xy, w, h, &taps);

    Ok((0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .collect())
}

/// Mean SSIM with Gaussian weighting (window 11, σ = 1.5).
pub fn ssim(reference: &Image, test: &Image, data_range: f64) -> Result<f64> {
    let map = ssim_map(reference, test, data_range)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Equivalent number of looks, `mean² / variance` (population variance).
///
/// Whole image when `region` is `None`; `+∞` for a constant region.
pub fn enl(img: &Image, region: Option<Rect>) -> Result<f64> {
    let r = region.unwrap_or(Rect {
        x: 0,
        y: 0,
        width: img.width(),
        height: img.height(),
    });
    if r.width == 0 || r.height == 0 {
        return Err(Error::InvalidParameter("ENL region is empty".into()));
    }
    if r.x + r.width > img.width() || r.y + r.height > img.height() {
        return Err(Error::InvalidParameter(format!(
            "ENL region {}x{}+{}+{} outside {}x{} image",
            r.width,
            r.height,
            r.x,
            r.y,
            img.width(),
            img.height()
        )));
    }
    let n = (r.width * r.height) as f64;
    let rows = || (r.y..r.y + r.height).map(|y| &img.row(y)[r.x..r.x + r.width]);
    // deviations from the first sample, so a constant region has variance 0 exactly
    let pivot = img.get(r.x, r.y);
    let shift = rows().flatten().map(|v| v - pivot).sum::<f64>() / n;
    let var = rows()
        .flatten()
        .map(|v| (v - pivot - shift) * (v - pivot - shift))
        .sum::<f64>()
        / n;
    let mean = pivot + shift;
    if var == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(mean * mean / var)
}
