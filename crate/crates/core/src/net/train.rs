//! Patch-sampled training with Adam and MSE, validated on fixed patches.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dataset::{load_pairs, DatasetManifest, NoisySource, Pair, Split};
use crate::error::{Error, Result};
use crate::eval::{csv_error, DATA_RANGE};
use crate::image::Image;
use crate::metrics::{mse, psnr, psnr_from_mse};
use crate::rng::{purpose, SeedSpec, Stream};

use super::adam::{adam_step, AdamState};
use super::checkpoint::save_checkpoint;
use super::model::{backward, denoise_cnn, forward, loss_mse, ConvNet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Side of the square training patches; at least 11.
    pub patch: usize,
    pub batch: usize,
    pub steps: usize,
    /// Validate every this many steps, and always after the last one.
    pub val_interval: usize,
    pub master_seed: u64,
    /// Where the best-validation network is written whenever it improves.
    pub checkpoint: Option<PathBuf>,
    pub depth: usize,
    pub width: usize,
    /// Number of fixed validation patches.
    pub val_patches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch: 40,
            batch: 16,
            steps: 2000,
            val_interval: 100,
            master_seed: 0,
            checkpoint: None,
            depth: 6,
            width: 48,
            val_patches: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_owned()));
        if self.patch < 11 {
            return bad("patch side must be at least 11");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch == 0 || self.val_interval == 0 || self.val_patches == 0 {
            return bad("batch, validation interval and validation patch count must be positive");
        }
        if self.depth == 0 || self.width == 0 {
            return bad("depth and width must be positive");
        }
        Ok(())
    }
}

/// One line of the training log. `val_psnr` is present on validation steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network with the best validation PSNR.
    pub best: ConvNet<f32>,
    pub best_step: usize,
    pub best_val_psnr: f64,
    /// Validation MSE of the best network.
    pub best_val_mse: f64,
    /// Network after the final step.
    pub last: ConvNet<f32>,
    /// Mean PSNR of the unprocessed noisy validation patches.
    pub noisy_val_psnr: f64,
    pub log: Vec<LogRow>,
}

/// Writes the log as CSV `step,loss,val_psnr`.
pub fn write_train_log<W: Write>(log: &[LogRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["step", "loss", "val_psnr"]).map_err(csv_error)?;
    for r in log {
        let val = r.val_psnr.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.step.to_string(), r.loss.to_string(), val])
            .map_err(csv_error)?;
    }
    w.flush()
        .map_err(|e| Error::Training(format!("log write failed: {e}")))
}

/// Trains on the train entries of `manifest` (noisy images regenerated
/// unclamped from their seeds). Validation uses, in order of preference, the
/// val entries of `val_manifest`, the val entries of `manifest`, or the train
/// images themselves; validation noisy images are the stored files.
pub fn train_manifest(
    manifest: &DatasetManifest,
    root: &Path,
    val_manifest: Option<(&DatasetManifest, &Path)>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let train_pairs = load_pairs(manifest, root, Split::Train, NoisySource::Regenerated)?;
    if train_pairs.is_empty() {
        return Err(Error::Training("manifest has no train entries".into()));
    }
    let mut val_pairs = match val_manifest {
        Some((m, r)) => load_pairs(m, r, Split::Val, NoisySource::File)?,
        None => Vec::new(),
    };
    if val_pairs.is_empty() {
        val_pairs = load_pairs(manifest, root, Split::Val, NoisySource::File)?;
    }
    if val_pairs.is_empty() {
        log::warn!("no validation entries; validating on patches of the training images");
        val_pairs = load_pairs(manifest, root, Split::Train, NoisySource::File)?;
    }
    train(&train_pairs, &val_pairs, cfg)
}

fn eligible(pairs: &[Pair], patch: usize) -> Vec<&Pair> {
    pairs
        .iter()
        .filter(|p| p.clean.width() >= patch && p.clean.height() >= patch)
        .collect()
}

fn sample_patch(pairs: &[&Pair], patch: usize, rng: &mut Stream) -> Result<(Image, Image)> {
    let p = pairs[rng.below(pairs.len())];
    let x = rng.below(p.clean.width() - patch + 1);
    let y = rng.below(p.clean.height() - patch + 1);
    Ok((p.clean.crop(x, y, patch, patch)?, p.noisy.crop(x, y, patch, patch)?))
}

struct ValSet {
    clean: Vec<Image>,
    noisy: Vec<Image>,
}

impl ValSet {
    /// `(mean PSNR, mean MSE)` of the network's outputs.
    fn score(&self, net: &ConvNet<f32>) -> Result<(f64, f64)> {
        let mut psnr_sum = 0.0;
        let mut mse_sum = 0.0;
        for (c, n) in self.clean.iter().zip(&self.noisy) {
            let out = denoise_cnn(net, n)?;
            let e = mse(c, &out)?;
            psnr_sum += psnr_from_mse(e, DATA_RANGE);
            mse_sum += e;
        }
        let k = self.clean.len() as f64;
        Ok((psnr_sum / k, mse_sum / k))
    }

    fn noisy_psnr(&self) -> Result<f64> {
        let mut sum = 0.0;
        for (c, n) in self.clean.iter().zip(&self.noisy) {
            sum += psnr(c, n, DATA_RANGE)?;
        }
        Ok(sum / self.clean.len() as f64)
    }
}

/// Runs `cfg.steps` Adam steps on random patch pairs from `train_pairs` and
/// keeps the network with the best mean PSNR on fixed validation patches cut
/// from `val_pairs`.
pub fn train(train_pairs: &[Pair], val_pairs: &[Pair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let seeds = SeedSpec::new(cfg.master_seed);
    let train_set = eligible(train_pairs, cfg.patch);
    if train_set.is_empty() {
        return Err(Error::Training(format!(
            "no training image is at least {0}x{0}",
            cfg.patch
        )));
    }
    let val_source = eligible(val_pairs, cfg.patch);
    if val_source.is_empty() {
        return Err(Error::Training(format!(
            "no validation image is at least {0}x{0}",
            cfg.patch
        )));
    }
    let mut val_rng = seeds.derive(purpose::VALIDATION, 0);
    let mut val = ValSet {
        clean: Vec::with_capacity(cfg.val_patches),
        noisy: Vec::with_capacity(cfg.val_patches),
    };
    for _ in 0..cfg.val_patches {
        let (c, n) = sample_patch(&val_source, cfg.patch, &mut val_rng)?;
        val.clean.push(c);
        val.noisy.push(n);
    }
    let noisy_val_psnr = val.noisy_psnr()?;

    let mut net: ConvNet<f32> = ConvNet::new(cfg.depth, cfg.width, &mut seeds.derive(purpose::NET_INIT, 0))?;
    let mut adam = AdamState::new(&net);
    let mut rng = seeds.derive(purpose::TRAIN_SAMPLING, 0);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut best: Option<(ConvNet<f32>, usize, f64, f64)> = None;

    for step in 1..=cfg.steps {
        let mut clean = Vec::with_capacity(cfg.batch);
        let mut noisy = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let (c, n) = sample_patch(&train_set, cfg.patch, &mut rng)?;
            clean.push(c);
            noisy.push(n);
        }
        let pass = forward(&net, &noisy)?;
        let loss = loss_mse(&pass.clean_est, &clean)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("batch loss is {loss}"),
            });
        }
        let grads = backward(&net, &pass.cache, &clean)?;
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "gradient contains a non-finite value".into(),
            });
        }
        adam_step(&mut net, &grads, &mut adam)?;
        if !net.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "parameters became non-finite after the update".into(),
            });
        }

        let mut row = LogRow {
            step,
            loss,
            val_psnr: None,
        };
        if step % cfg.val_interval == 0 || step == cfg.steps {
            let (vp, vm) = val.score(&net)?;
            row.val_psnr = Some(vp);
            log::info!("step {step}: loss {loss:.6}, val psnr {vp:.3} dB");
            if best.as_ref().map_or(true, |b| vp > b.2) {
                if let Some(path) = &cfg.checkpoint {
                    save_checkpoint(&net, path)?;
                }
                best = Some((net.clone(), step, vp, vm));
            }
        }
        log.push(row);
    }

    let (best_net, best_step, best_val_psnr, best_val_mse) = best.expect("last step always validates");
    Ok(TrainOutcome {
        best: best_net,
        best_step,
        best_val_psnr,
        best_val_mse,
        last: net,
        noisy_val_psnr,
        log,
    })
}
