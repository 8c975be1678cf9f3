//! Quality and performance measurement.
//!
//! All variances are population (1/N) variances.

mod quality;

pub use quality::{enl, mse, psnr, psnr_from_mse, ssim, ssim_map, ssim_taps, Rect, SSIM_SIGMA, SSIM_WINDOW};
