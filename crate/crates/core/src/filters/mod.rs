//! Classical despeckling filters.
//!
//! All filters take an [`Image`] and [`FilterParams`] and return a new image.
//! Borders use mirror reflection without repeating the edge pixel
//! (`-1 → 1`). Local statistics are taken over a `(2r+1)²` window with
//! population variance; the observed coefficient of variation is
//! `Cy = s / m`, with `Cy = 0` wherever `m = 0`.
//!
//! | filter | output |
//! |--------|--------|
//! | Lee    | `m + k (y − m)`, `k = clamp(1 − Cn²/Cy², 0, 1)` |
//! | Kuan   | `m + k (y − m)`, `k = clamp((1 − Cn²/Cy²)/(1 + Cn²), 0, 1)` |
//! | Frost  | `Σ y(q) w(q) / Σ w(q)`, `w(q) = exp(−D · Cy(p)² · |p − q|)` |
//! | PPB    | see [`ppb_lite`] |

mod local;
mod ppb;

use std::fmt;
use std::str::FromStr;

pub use local::{estimate_noise_cv, frost, kuan, lee, local_stats, LocalStats};
pub use ppb::{patch_dissimilarity, ppb_lite, PPB_FLOOR};

use crate::error::{Error, Result};
use crate::image::Image;

/// Bandwidth of the patch filter for single-look speckle (`Cn = 1`).
pub const PPB_H_SINGLE_LOOK: f64 = 10.0;

/// Frost damping used when the speckle level is unknown.
pub const FROST_DAMPING_DEFAULT: f64 = 2.0;

/// Frost damping times `Cn²` when the speckle level is known.
pub const FROST_DAMPING_CN2: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpbParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Bandwidth `h` of the exponential patch kernel.
    pub h: f64,
}

impl Default for PpbParams {
    fn default() -> Self {
        Self {
            patch_radius: 3,
            search_radius: 10,
            h: PPB_H_SINGLE_LOOK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Window radius of Lee/Kuan/Frost; 3 gives a 7×7 window.
    pub window_radius: usize,
    /// Coefficient of variation of the speckle, `Cn`.
    pub noise_cv: f64,
    pub frost_damping: f64,
    pub ppb: PpbParams,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            window_radius: 3,
            noise_cv: 1.0,
            frost_damping: FROST_DAMPING_DEFAULT,
            ppb: PpbParams::default(),
        }
    }
}

impl FilterParams {
    /// Defaults tuned to a known speckle level.
    ///
    /// The patch bandwidth scales with `Cn²`, the expected per-pixel patch
    /// dissimilarity between two samples of the same reflectivity, so that it
    /// equals [`PPB_H_SINGLE_LOOK`] at one look. The Frost damping scales
    /// with `1/Cn²`: on homogeneous ground `Cy ≈ Cn`, so the kernel there has
    /// the same shape at every noise level.
    pub fn for_noise_cv(noise_cv: f64) -> Self {
        let cn2 = noise_cv * noise_cv;
        let mut p = Self {
            noise_cv,
            frost_damping: FROST_DAMPING_CN2 / cn2,
            ..Self::default()
        };
        p.ppb.h = PPB_H_SINGLE_LOOK * cn2;
        p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.window_radius < 1 {
            return bad("window radius must be at least 1".into());
        }
        if !(self.noise_cv > 0.0 && self.noise_cv.is_finite()) {
            return bad(format!("noise cv must be positive, got {}", self.noise_cv));
        }
        if !(self.frost_damping > 0.0 && self.frost_damping.is_finite()) {
            return bad(format!("frost damping must be positive, got {}", self.frost_damping));
        }
        if !(self.ppb.h > 0.0 && self.ppb.h.is_finite()) {
            return bad(format!("ppb bandwidth h must be positive, got {}", self.ppb.h));
        }
        if self.ppb.patch_radius > self.ppb.search_radius {
            return bad(format!(
                "ppb patch radius {} exceeds search radius {}",
                self.ppb.patch_radius, self.ppb.search_radius
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Filter {
    Lee,
    Kuan,
    Frost,
    Ppb,
}

impl Filter {
    pub const ALL: [Filter; 4] = [Filter::Lee, Filter::Kuan, Filter::Frost, Filter::Ppb];

    pub fn name(self) -> &'static str {
        match self {
            Filter::Lee => "lee",
            Filter::Kuan => "kuan",
            Filter::Frost => "frost",
            Filter::Ppb => "ppb",
        }
    }

    pub fn apply(self, img: &Image, params: &FilterParams) -> Result<Image> {
        match self {
            Filter::Lee => lee(img, params),
            Filter::Kuan => kuan(img, params),
            Filter::Frost => frost(img, params),
            Filter::Ppb => ppb_lite(img, params),
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lee" => Ok(Filter::Lee),
            "kuan" => Ok(Filter::Kuan),
            "frost" => Ok(Filter::Frost),
            "ppb" | "ppb_lite" => Ok(Filter::Ppb),
            other => Err(Error::UnknownAlgorithm(other.to_string())),
        }
    }
}

/// Reflect-101 index into `0..n`.
#[inline]
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Copy of `img` padded by `pad` pixels of mirror reflection on every side.
pub(crate) fn pad_mirror(img: &Image, pad: usize) -> (Vec<f64>, usize) {
    let (w, h) = img.dims();
    let pw = w + 2 * pad;
    let mut out = Vec::with_capacity(pw * (h + 2 * pad));
    for py in 0..h + 2 * pad {
        let y = mirror(py as isize - pad as isize, h);
        let row = img.row(y);
        for px in 0..pw {
            out.push(row[mirror(px as isize - pad as isize, w)]);
        }
    }
    (out, pw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_reflects_without_repeating_edge() {
        let got: Vec<usize> = (-3..8).map(|i| mirror(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(mirror(-7, 1), 0);
        assert_eq!(mirror(-5, 2), 1);
        assert_eq!(mirror(12, 3), 0);
    }

    #[test]
    fn params_validation() {
        assert!(FilterParams::default().validate().is_ok());
        let mut p = FilterParams::default();
        p.window_radius = 0;
        assert!(p.validate().is_err());
        let mut p = FilterParams::default();
        p.noise_cv = 0.0;
        assert!(p.validate().is_err());
        let mut p = FilterParams::default();
        p.frost_damping = -1.0;
        assert!(p.validate().is_err());
        let mut p = FilterParams::default();
        p.ppb.h = 0.0;
        assert!(p.validate().is_err());
        let mut p = FilterParams::default();
        p.ppb.patch_radius = 11;
        assert!(p.validate().is_err());
    }

    #[test]
    fn bandwidth_scales_with_noise_level() {
        assert_eq!(FilterParams::for_noise_cv(1.0).ppb.h, PPB_H_SINGLE_LOOK);
        assert!((FilterParams::for_noise_cv(0.05f64.sqrt()).ppb.h - 0.5).abs() < 1e-12);
        assert!((FilterParams::for_noise_cv(0.05f64.sqrt()).frost_damping - 8.0).abs() < 1e-9);
        assert_eq!(FilterParams::default().frost_damping, FROST_DAMPING_DEFAULT);
    }

    #[test]
    fn names_round_trip() {
        for f in Filter::ALL {
            assert_eq!(f.name().parse::<Filter>().unwrap(), f);
        }
        assert!(matches!("bm3d".parse::<Filter>(), Err(Error::UnknownAlgorithm(_))));
    }
}
