//! Benchmark harness: named algorithms, wall-clock timing and per-manifest
//! quality reports.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::filters::{Filter, FilterParams};
use crate::image::Image;
use crate::io::load_image;
use crate::metrics::{enl, psnr, ssim};
use crate::net::{denoise_cnn, ConvNet};

/// Peak-to-peak range of every image handled by the toolkit.
pub const DATA_RANGE: f64 = 1.0;

/// Smallest noise coefficient of variation handed to the filters.
pub const MIN_NOISE_CV: f64 = 1e-6;

/// Algorithm name as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Filter(Filter),
    Cnn,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Filter(f) => f.name(),
            Algorithm::Cnn => "cnn",
        }
    }

    /// Parses a comma-separated list, ignoring empty items.
    pub fn parse_list(s: &str) -> Result<Vec<Algorithm>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cnn" {
            Ok(Algorithm::Cnn)
        } else {
            s.parse().map(Algorithm::Filter)
        }
    }
}

/// A fully configured despeckler.
#[derive(Debug, Clone, Copy)]
pub enum Denoiser<'a> {
    Filter(Filter, FilterParams),
    Cnn(&'a ConvNet<f32>),
}

impl<'a> Denoiser<'a> {
    /// Pairs `alg` with its configuration; `Cnn` needs a network.
    pub fn new(alg: Algorithm, params: FilterParams, net: Option<&'a ConvNet<f32>>) -> Result<Self> {
        match alg {
            Algorithm::Filter(f) => {
                params.validate()?;
                Ok(Denoiser::Filter(f, params))
            }
            Algorithm::Cnn => net
                .map(Denoiser::Cnn)
                .ok_or_else(|| Error::InvalidParameter("cnn requires a trained model".into())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Denoiser::Filter(f, _) => f.name(),
            Denoiser::Cnn(_) => "cnn",
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        match self {
            Denoiser::Filter(f, p) => f.apply(img, p),
            Denoiser::Cnn(net) => denoise_cnn(*net, img),
        }
    }
}

/// Median wall-clock seconds of `repeats` runs on a preloaded image, after
/// one discarded warm-up run.
pub fn time_denoiser(den: &Denoiser, img: &Image, repeats: usize) -> Result<f64> {
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be at least 1".into()));
    }
    den.apply(img)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = den.apply(img)?;
        times.push(start.elapsed().as_secs_f64());
        drop(out);
    }
    Ok(median(&mut times))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One line of an evaluation report. `elapsed_s` is empty for the noisy
/// baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub image_id: String,
    pub algorithm: String,
    pub enl: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub elapsed_s: Option<f64>,
}

/// User overrides on top of the noise-matched filter defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParamOverrides {
    pub window_radius: Option<usize>,
    pub frost_damping: Option<f64>,
    pub ppb_h: Option<f64>,
}

impl ParamOverrides {
    /// [`FilterParams::for_noise_cv`] at `noise_cv` (floored at
    /// [`MIN_NOISE_CV`]) with the overrides applied.
    pub fn params(&self, noise_cv: f64) -> FilterParams {
        let mut p = FilterParams::for_noise_cv(noise_cv.max(MIN_NOISE_CV));
        if let Some(r) = self.window_radius {
            p.window_radius = r;
        }
        if let Some(d) = self.frost_damping {
            p.frost_damping = d;
        }
        if let Some(h) = self.ppb_h {
            p.ppb.h = h;
        }
        p
    }
}

fn quality_row(id: &str, alg: &str, clean: &Image, out: &Image, elapsed: Option<f64>) -> Result<EvalRow> {
    Ok(EvalRow {
        image_id: id.to_owned(),
        algorithm: alg.to_owned(),
        enl: enl(out, None)?,
        psnr: psnr(clean, out, DATA_RANGE)?,
        ssim: ssim(clean, out, DATA_RANGE)?,
        elapsed_s: elapsed,
    })
}

/// Scores the stored noisy image and every algorithm's output for each
/// entry. Filters are configured for the entry's known noise level. Rows are
/// ordered by entry, then `noisy`, then `algorithms` order.
pub fn evaluate_manifest(
    manifest: &DatasetManifest,
    root: &Path,
    algorithms: &[Algorithm],
    overrides: &ParamOverrides,
    net: Option<&ConvNet<f32>>,
) -> Result<Vec<EvalRow>> {
    if algorithms.contains(&Algorithm::Cnn) && net.is_none() {
        return Err(Error::InvalidParameter("cnn requires a trained model".into()));
    }
    let mut rows = Vec::with_capacity(manifest.entries.len() * (algorithms.len() + 1));
    for entry in &manifest.entries {
        let id = entry.id();
        let clean = load_image(root.join(&entry.clean_path))?;
        let noisy = load_image(root.join(&entry.noisy_path))?;
        rows.push(quality_row(&id, "noisy", &clean, &noisy, None)?);
        let params = overrides.params(entry.noise.noise_cv());
        for &alg in algorithms {
            let den = Denoiser::new(alg, params, net)?;
            let start = Instant::now();
            let out = den.apply(&noisy)?;
            let elapsed = start.elapsed().as_secs_f64();
            rows.push(quality_row(&id, alg.name(), &clean, &out, Some(elapsed))?);
        }
    }
    Ok(rows)
}

/// Writes rows as CSV with header `image_id,algorithm,enl,psnr,ssim,elapsed_s`.
/// Infinity is written as `inf`.
pub fn write_report<W: Write>(rows: &[EvalRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["image_id", "algorithm", "enl", "psnr", "ssim", "elapsed_s"])
        .map_err(csv_error)?;
    for r in rows {
        let elapsed = r.elapsed_s.map(|e| e.to_string()).unwrap_or_default();
        w.write_record([
            r.image_id.clone(),
            r.algorithm.clone(),
            r.enl.to_string(),
            r.psnr.to_string(),
            r.ssim.to_string(),
            elapsed,
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::InvalidParameter(format!("report write failed: {e}")))
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::InvalidParameter(format!("csv write failed: {e}"))
}
