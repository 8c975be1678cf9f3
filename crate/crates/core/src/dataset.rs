//! Paired clean/noisy dataset generation with a replayable manifest.
//!
//! A dataset lives in one output folder:
//!
//! ```text
//! out/manifest.jsonl
//! out/<category>/<stem>_clean.png
//! out/<category>/<stem>_noisy.png
//! ```
//!
//! The manifest is line-oriented JSON: a header object followed by one entry
//! per line. Entry paths are relative to the manifest's folder and always use
//! `/` separators. Every noisy file can be regenerated bit for bit from its
//! clean file, noise spec and seed triple, which [`verify_manifest`] checks.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{encode_png, load_image};
use crate::rng::{SeedSpec, Stream};
use crate::speckle::{synthesize, NoiseSpec, MAX_ETA_VARIANCE};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DEFAULT_SIGMA_MIN: f64 = 0.05;
pub const DEFAULT_SIGMA_MAX: f64 = 0.9;
pub const DEFAULT_CROSSVAL_VARIANCE: f64 = 0.05;

const IMAGE_EXTENSIONS: [&str; 2] = ["png", "pgm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Family used to realize an assigned η variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    Gamma,
    Uniform,
}

impl NoiseModel {
    /// Noise spec with (approximately) the given variance. Gamma rounds to
    /// the nearest whole number of looks, `L = round(1/v)`, at least 1.
    pub fn spec(self, variance: f64) -> Result<NoiseSpec> {
        let spec = match self {
            NoiseModel::Uniform => NoiseSpec::Uniform { variance },
            NoiseModel::Gamma => {
                if !(variance > 0.0 && variance.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma noise needs a positive variance, got {variance}"
                    )));
                }
                let looks = (1.0 / variance).round().clamp(1.0, f64::from(u32::MAX));
                NoiseSpec::Gamma { looks: looks as u32 }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(NoiseModel::Gamma),
            "uniform" => Ok(NoiseModel::Uniform),
            other => Err(Error::InvalidParameter(format!(
                "unknown noise model '{other}' (expected gamma or uniform)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub category: String,
    /// Ordinal within the category, in byte-wise filename order.
    pub index: u64,
    pub clean_path: String,
    pub noisy_path: String,
    pub noise: NoiseSpec,
    /// `(master seed, category index, image index)`.
    pub seed_triple: (u64, u64, u64),
    pub split: Split,
}

impl ManifestEntry {
    /// Identifier used in reports: `<category>/<index>`.
    pub fn id(&self) -> String {
        format!("{}/{}", self.category, self.index)
    }

    fn stream(&self, master_seed: u64) -> Stream {
        SeedSpec::new(master_seed).derive(self.seed_triple.1, self.seed_triple.2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    pub master_seed: u64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub model: NoiseModel,
}

/// Ordered record of a generated dataset. Entries are sorted by
/// `(category, index)` and unique on that key.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Streams a manifest file line by line. `path` is also the base for the
    /// entries' relative paths (see [`DatasetManifest::root_of`]).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, detail: String| Error::Manifest {
            path: path.to_path_buf(),
            detail: format!("line {line}: {detail}"),
        };
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: ManifestHeader = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&line).map_err(|e| bad(1, e.to_string()))?
            }
            None => return Err(bad(1, "empty manifest".into())),
        };
        if header.version != MANIFEST_VERSION {
            return Err(bad(1, format!("unsupported manifest version {}", header.version)));
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            entry.noise.validate().map_err(|e| bad(i + 1, e.to_string()))?;
            entries.push(entry);
        }
        let manifest = DatasetManifest { header, entries };
        manifest.check_order().map_err(|d| bad(0, d))?;
        Ok(manifest)
    }

    /// Folder that entry paths are relative to.
    pub fn root_of(manifest_path: &Path) -> PathBuf {
        manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    fn check_order(&self) -> std::result::Result<(), String> {
        for pair in self.entries.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if (a.category.as_bytes(), a.index) >= (b.category.as_bytes(), b.index) {
                return Err(format!(
                    "entries not strictly sorted at {} / {}",
                    a.id(),
                    b.id()
                ));
            }
        }
        Ok(())
    }
}

/// Linearly spaced variances from `sigma_min` to `sigma_max`; the midpoint
/// when `n = 1`.
pub fn assign_spectrum(n: usize, sigma_min: f64, sigma_max: f64) -> Result<Vec<f64>> {
    check_range(sigma_min, sigma_max)?;
    if n == 0 {
        return Err(Error::InvalidParameter("spectrum needs at least one image".into()));
    }
    if n == 1 {
        return Ok(vec![sigma_min + (sigma_max - sigma_min) / 2.0]);
    }
    let last = (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                sigma_max
            } else {
                sigma_min + (sigma_max - sigma_min) * i as f64 / last
            }
        })
        .collect())
}

fn check_range(sigma_min: f64, sigma_max: f64) -> Result<()> {
    if !(0.0 <= sigma_min && sigma_min <= sigma_max && sigma_max <= MAX_ETA_VARIANCE) {
        return Err(Error::InvalidParameter(format!(
            "variance range must satisfy 0 <= min <= max <= {MAX_ETA_VARIANCE}, got [{sigma_min}, {sigma_max}]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub master_seed: u64,
    pub model: NoiseModel,
    /// Skip unreadable images with a warning instead of aborting.
    pub skip_unreadable: bool,
    /// Worker threads; 0 uses the ambient rayon pool.
    pub threads: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            master_seed: 0,
            model: NoiseModel::Uniform,
            skip_unreadable: false,
            threads: 0,
        }
    }
}

/// Runs `f` on a pool with `threads` workers, or on the ambient pool for 0.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Sorted (byte-wise) image files directly inside `dir`.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.as_os_str().as_encoded_bytes().cmp(b.as_os_str().as_encoded_bytes()));
    Ok(files)
}

fn file_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidParameter(format!("{}: name is not valid UTF-8", path.display())))
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|n| n.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidParameter(format!("{}: name is not valid UTF-8", path.display())))
}

/// One image scheduled for generation.
struct Job {
    category: String,
    category_index: u64,
    index: u64,
    source: Image,
    stem: String,
    noise: NoiseSpec,
    split: Split,
}

/// Loads the images of one category in sorted order, honoring the skip flag.
fn load_category(files: &[PathBuf], skip_unreadable: bool) -> Result<Vec<(String, Image)>> {
    let loaded: Vec<(PathBuf, Result<Image>)> = files.par_iter().map(|p| (p.clone(), load_image(p))).collect();
    let mut out = Vec::with_capacity(loaded.len());
    let mut stems = HashSet::new();
    for (path, img) in loaded {
        match img {
            Ok(img) => {
                let s = stem(&path)?;
                if !stems.insert(s.clone()) {
                    return Err(Error::InvalidParameter(format!(
                        "{}: another image in the folder has the same stem '{s}'",
                        path.display()
                    )));
                }
                out.push((s, img));
            }
            Err(e) if skip_unreadable => log::warn!("skipping unreadable image: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Writes the clean and noisy PNGs of every job in parallel and returns the
/// entries in job order.
fn generate(jobs: Vec<Job>, out_root: &Path, master_seed: u64) -> Result<Vec<ManifestEntry>> {
    let mut dirs: Vec<&str> = jobs.iter().map(|j| j.category.as_str()).collect();
    dirs.dedup();
    for d in dirs {
        let dir = out_root.join(d);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    jobs.into_par_iter()
        .map(|job| {
            let clean = job.source.quantized();
            let mut stream = SeedSpec::new(master_seed).derive(job.category_index, job.index);
            let noisy = synthesize(&clean, &job.noise, &mut stream)?;
            let clean_path = format!("{}/{}_clean.png", job.category, job.stem);
            let noisy_path = format!("{}/{}_noisy.png", job.category, job.stem);
            write_bytes(&out_root.join(&clean_path), &encode_png(&clean)?)?;
            write_bytes(&out_root.join(&noisy_path), &encode_png(&noisy)?)?;
            Ok(ManifestEntry {
                category: job.category,
                index: job.index,
                clean_path,
                noisy_path,
                noise: job.noise,
                seed_triple: (master_seed, job.category_index, job.index),
                split: job.split,
            })
        })
        .collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Builds a training set from a folder of category subfolders. Within each
/// category the sorted images receive linearly spaced variances across
/// `[sigma_min, sigma_max]`. Writes `manifest.jsonl` into `out_root`.
pub fn build_dataset(src_root: &Path, out_root: &Path, opts: &BuildOptions) -> Result<DatasetManifest> {
    check_range(opts.sigma_min, opts.sigma_max)?;
    if !src_root.is_dir() {
        return Err(Error::NotFound {
            path: src_root.to_path_buf(),
        });
    }
    let mut categories = Vec::new();
    for entry in fs::read_dir(src_root).map_err(|e| Error::io(src_root, e))? {
        let path = entry.map_err(|e| Error::io(src_root, e))?.path();
        if path.is_dir() {
            categories.push(path);
        }
    }
    categories.sort_by(|a, b| a.as_os_str().as_encoded_bytes().cmp(b.as_os_str().as_encoded_bytes()));

    let manifest = with_threads(opts.threads, || -> Result<DatasetManifest> {
        let mut jobs = Vec::new();
        let mut category_index = 0u64;
        for dir in &categories {
            let name = file_name(dir)?;
            let images = load_category(&list_images(dir)?, opts.skip_unreadable)?;
            if images.is_empty() {
                log::warn!("{}: category has no images, skipped", dir.display());
                continue;
            }
            let spectrum = assign_spectrum(images.len(), opts.sigma_min, opts.sigma_max)?;
            for (i, ((stem, source), v)) in images.into_iter().zip(spectrum).enumerate() {
                jobs.push(Job {
                    category: name.clone(),
                    category_index,
                    index: i as u64,
                    source,
                    stem,
                    noise: opts.model.spec(v)?,
                    split: Split::Train,
                });
            }
            category_index += 1;
        }
        if jobs.is_empty() {
            return Err(Error::EmptySource {
                path: src_root.to_path_buf(),
            });
        }
        let entries = generate(jobs, out_root, opts.master_seed)?;
        Ok(DatasetManifest {
            header: ManifestHeader {
                version: MANIFEST_VERSION,
                master_seed: opts.master_seed,
                sigma_min: opts.sigma_min,
                sigma_max: opts.sigma_max,
                model: opts.model,
            },
            entries,
        })
    })??;
    manifest.save(out_root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct CrossvalOptions {
    pub variance: f64,
    pub master_seed: u64,
    pub skip_unreadable: bool,
    pub threads: usize,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        Self {
            variance: DEFAULT_CROSSVAL_VARIANCE,
            master_seed: 0,
            skip_unreadable: false,
            threads: 0,
        }
    }
}

/// Builds a validation set: every image in `src_folder` speckled with
/// uniform η at one fixed variance. The category is the folder's name.
pub fn build_crossval(src_folder: &Path, out_root: &Path, opts: &CrossvalOptions) -> Result<DatasetManifest> {
    let noise = NoiseModel::Uniform.spec(opts.variance)?;
    if !src_folder.is_dir() {
        return Err(Error::NotFound {
            path: src_folder.to_path_buf(),
        });
    }
    let category = src_folder
        .canonicalize()
        .map_err(|e| Error::io(src_folder, e))
        .and_then(|p| file_name(&p))
        .unwrap_or_else(|_| "crossval".to_owned());

    let manifest = with_threads(opts.threads, || -> Result<DatasetManifest> {
        let images = load_category(&list_images(src_folder)?, opts.skip_unreadable)?;
        if images.is_empty() {
            return Err(Error::EmptySource {
                path: src_folder.to_path_buf(),
            });
        }
        let jobs = images
            .into_iter()
            .enumerate()
            .map(|(i, (stem, source))| Job {
                category: category.clone(),
                category_index: 0,
                index: i as u64,
                source,
                stem,
                noise,
                split: Split::Val,
            })
            .collect();
        let entries = generate(jobs, out_root, opts.master_seed)?;
        Ok(DatasetManifest {
            header: ManifestHeader {
                version: MANIFEST_VERSION,
                master_seed: opts.master_seed,
                sigma_min: opts.variance,
                sigma_max: opts.variance,
                model: NoiseModel::Uniform,
            },
            entries,
        })
    })??;
    manifest.save(out_root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub id: String,
    pub noisy_path: String,
    pub reason: String,
}

/// Outcome of [`verify_manifest`]; empty means verified.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl VerifyReport {
    pub fn is_verified(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Regenerates every noisy image from its clean file, noise spec and the
/// header's master seed, and compares the encoded bytes with the stored file.
/// Missing files are errors, differing content is reported.
pub fn verify_manifest(manifest: &DatasetManifest, root: &Path) -> Result<VerifyReport> {
    let master = manifest.header.master_seed;
    let results: Vec<Option<Mismatch>> = manifest
        .entries
        .par_iter()
        .map(|e| -> Result<Option<Mismatch>> {
            let clean = load_image(root.join(&e.clean_path))?;
            let noisy_file = root.join(&e.noisy_path);
            let stored = fs::read(&noisy_file).map_err(|err| Error::io(&noisy_file, err))?;
            let mismatch = |reason: String| {
                Some(Mismatch {
                    id: e.id(),
                    noisy_path: e.noisy_path.clone(),
                    reason,
                })
            };
            if e.seed_triple.0 != master {
                return Ok(mismatch(format!(
                    "seed triple master {} differs from header {master}",
                    e.seed_triple.0
                )));
            }
            let regenerated = encode_png(&synthesize(&clean, &e.noise, &mut e.stream(master))?)?;
            Ok(if regenerated == stored {
                None
            } else {
                mismatch("noisy file differs from regenerated image".into())
            })
        })
        .collect::<Result<_>>()?;
    Ok(VerifyReport {
        checked: manifest.entries.len(),
        mismatches: results.into_iter().flatten().collect(),
    })
}

/// A clean image with its speckled counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub clean: Image,
    pub noisy: Image,
}

/// How the noisy half of a [`Pair`] is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisySource {
    /// The stored 8-bit file (clamped to [0, 1]).
    File,
    /// Regenerated from the seed triple in the unclamped float domain.
    Regenerated,
}

/// Loads the pairs of `split` in manifest order.
pub fn load_pairs(manifest: &DatasetManifest, root: &Path, split: Split, source: NoisySource) -> Result<Vec<Pair>> {
    let master = manifest.header.master_seed;
    manifest
        .entries
        .par_iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let clean = load_image(root.join(&e.clean_path))?;
            let noisy = match source {
                NoisySource::File => {
                    let noisy = load_image(root.join(&e.noisy_path))?;
                    clean.check_same_shape(&noisy)?;
                    noisy
                }
                NoisySource::Regenerated => synthesize(&clean, &e.noise, &mut e.stream(master))?,
            };
            Ok(Pair { clean, noisy })
        })
        .collect()
}
