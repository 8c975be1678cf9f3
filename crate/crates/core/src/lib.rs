//! Speckle simulation, despeckling and evaluation toolkit.
//!
//! * [`speckle`]: gamma and uniform-η multiplicative noise models.
//! * [`dataset`]: paired clean/noisy dataset generation with a replayable manifest.
//! * [`filters`]: Lee, Kuan, Frost and a single-pass patch-based (PPB-style) filter.
//! * [`net`]: a small convolutional despeckler with a division skip, trained with Adam.
//! * [`metrics`]: PSNR, SSIM and ENL.
//! * [`eval`]: timing harness and manifest-level quality reports.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod filters;
pub mod metrics;
pub mod net;
pub mod image;
pub mod io;
pub mod rng;
pub mod scene;
pub mod speckle;

pub use dataset::{DatasetManifest, ManifestEntry};
pub use error::{Error, Result};
pub use eval::{Algorithm, Denoiser};
pub use image::{extract_patches, Image};
pub use io::{load_image, save_image};
pub use rng::{derive_stream, SeedSpec, Stream};
pub use speckle::{NoiseField, NoiseSpec};
