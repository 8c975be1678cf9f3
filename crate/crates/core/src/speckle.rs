//! Multiplicative speckle: sampling noise fields and applying them.
//!
//! Two models are supported:
//!
//! * **Gamma, L looks**: fading `N ~ Gamma(shape = L, scale = 1/L)`, so
//!   `E[N] = 1` and `Var[N] = 1/L`. Sampled exactly as the mean of `L`
//!   unit exponentials `-ln(1 - u)`.
//! * **Uniform η with variance v**: `η ~ U[1 - √(3v), 1 + √(3v)]`, mean 1
//!   and variance `v`. The mean is fixed at 1 so speckling preserves the
//!   average intensity. For `v > 1/3` the interval reaches below zero; such
//!   draws are clamped to 0, which biases the mean of the clamped field
//!   slightly upward.
//!
//! Observed intensity is the elementwise product `noisy = field · clean`. No
//! logarithmic transform is used anywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Stream;

/// Largest η variance accepted by the uniform model.
pub const MAX_ETA_VARIANCE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum NoiseSpec {
    Gamma { looks: u32 },
    Uniform { variance: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Gamma { looks } if looks < 1 => Err(Error::InvalidParameter(format!(
                "number of looks must be at least 1, got {looks}"
            ))),
            NoiseSpec::Uniform { variance } => check_eta_variance(variance),
            _ => Ok(()),
        }
    }

    /// Coefficient of variation of the (unclamped) noise: `1/√L` or `√v`.
    pub fn noise_cv(&self) -> f64 {
        match *self {
            NoiseSpec::Gamma { looks } => 1.0 / f64::from(looks).sqrt(),
            NoiseSpec::Uniform { variance } => variance.sqrt(),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseSpec::Gamma { looks } => 1.0 / f64::from(looks),
            NoiseSpec::Uniform { variance } => variance,
        }
    }
}

fn check_eta_variance(v: f64) -> Result<()> {
    if !(0.0..=MAX_ETA_VARIANCE).contains(&v) {
        return Err(Error::InvalidParameter(format!(
            "eta variance must lie in [0, {MAX_ETA_VARIANCE}], got {v}"
        )));
    }
    Ok(())
}

/// Realization of the multiplicative noise (`N` or `η`), all elements ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl NoiseField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        // Same shape discipline as an image.
        let img = Image::new(width, height, data)?;
        let (width, height) = img.dims();
        Ok(Self {
            width,
            height,
            data: img.into_data(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn check_dims(w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(Error::InvalidParameter(format!(
            "field dimensions must be positive, got {w}x{h}"
        )));
    }
    Ok(())
}

pub fn sample_gamma_field(w: usize, h: usize, looks: u32, rng: &mut Stream) -> Result<NoiseField> {
    NoiseSpec::Gamma { looks }.validate()?;
    check_dims(w, h)?;
    let inv = 1.0 / f64::from(looks);
    let data = (0..w * h)
        .map(|_| {
            let mut sum = 0.0;
            for _ in 0..looks {
                // 1 - u lies in (0, 1], so the log is finite.
                sum -= (1.0 - rng.uniform()).ln();
            }
            sum * inv
        })
        .collect();
    Ok(NoiseField {
        width: w,
        height: h,
        data,
    })
}

pub fn sample_uniform_eta_field(w: usize, h: usize, variance: f64, rng: &mut Stream) -> Result<NoiseField> {
    check_eta_variance(variance)?;
    check_dims(w, h)?;
    let half = (3.0 * variance).sqrt();
    let lo = 1.0 - half;
    let data = (0..w * h)
        .map(|_| (lo + 2.0 * half * rng.uniform()).max(0.0))
        .collect();
    Ok(NoiseField {
        width: w,
        height: h,
        data,
    })
}

pub fn sample_field(w: usize, h: usize, spec: &NoiseSpec, rng: &mut Stream) -> Result<NoiseField> {
    match *spec {
        NoiseSpec::Gamma { looks } => sample_gamma_field(w, h, looks, rng),
        NoiseSpec::Uniform { variance } => sample_uniform_eta_field(w, h, variance, rng),
    }
}

/// Elementwise `field · img`; values above 1 are kept.
pub fn apply_speckle(img: &Image, field: &NoiseField) -> Result<Image> {
    if img.dims() != field.dims() {
        return Err(Error::shape(img.dims(), field.dims()));
    }
    let data = img
        .data()
        .iter()
        .zip(&field.data)
        .map(|(x, n)| x * n)
        .collect();
    Image::new(img.width(), img.height(), data)
}

/// Signed additive form of the speckle component, `noisy − clean`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Residual {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// `clean + residual`, the inverse of [`residual_field`].
    pub fn add_to(&self, clean: &Image) -> Result<Image> {
        if clean.dims() != self.dims() {
            return Err(Error::shape(clean.dims(), self.dims()));
        }
        let data = clean
            .data()
            .iter()
            .zip(&self.data)
            .map(|(c, k)| c + k)
            .collect();
        Image::new(self.width, self.height, data)
    }
}

pub fn residual_field(noisy: &Image, clean: &Image) -> Result<Residual> {
    noisy.check_same_shape(clean)?;
    Ok(Residual {
        width: noisy.width(),
        height: noisy.height(),
        data: noisy
            .data()
            .iter()
            .zip(clean.data())
            .map(|(y, x)| y - x)
            .collect(),
    })
}

/// Samples a field for `spec` from `rng` and applies it to `img`.
pub fn synthesize(img: &Image, spec: &NoiseSpec, rng: &mut Stream) -> Result<Image> {
    let field = sample_field(img.width(), img.height(), spec, rng)?;
    apply_speckle(img, &field)
}
