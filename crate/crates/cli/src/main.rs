//! `despeck`: speckle synthesis, dataset building, despeckling, evaluation,
//! training and timing from one binary.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a runtime error,
//! which is reported on stderr as `error: <code>: <detail>`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use despeck::dataset::{
    build_crossval, build_dataset, verify_manifest, BuildOptions, CrossvalOptions, DatasetManifest, NoiseModel,
    DEFAULT_CROSSVAL_VARIANCE, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN,
};
use despeck::eval::{evaluate_manifest, time_denoiser, write_report, Algorithm, Denoiser, ParamOverrides};
use despeck::filters::{estimate_noise_cv, FilterParams};
use despeck::net::{load_checkpoint, save_checkpoint, train_manifest, write_train_log, ConvNet, TrainConfig};
use despeck::rng::purpose;
use despeck::speckle::{synthesize, NoiseSpec};
use despeck::{load_image, save_image, Error, Image, Result, SeedSpec};

#[derive(Debug, Parser)]
#[command(name = "despeck", version, about = "Speckle simulation and despeckling benchmarks")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: logical cores). Affects wall-clock time only.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress the reproducibility stanza and progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply synthetic speckle to one image.
    Synth(SynthArgs),
    /// Build a training set from a folder of category subfolders.
    BuildDataset(BuildDatasetArgs),
    /// Build a fixed-noise validation set from a folder of images.
    BuildCrossval(BuildCrossvalArgs),
    /// Regenerate every noisy image of a manifest and compare bytes.
    Verify(VerifyArgs),
    /// Despeckle one image.
    Denoise(DenoiseArgs),
    /// Score algorithms on every entry of a manifest.
    Evaluate(EvaluateArgs),
    /// Train the convolutional despeckler.
    Train(TrainArgs),
    /// Time algorithms on a synthetic speckled image.
    Bench(BenchArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::BuildDataset(_) => "build-dataset",
            Command::BuildCrossval(_) => "build-crossval",
            Command::Verify(_) => "verify",
            Command::Denoise(_) => "denoise",
            Command::Evaluate(_) => "evaluate",
            Command::Train(_) => "train",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Noise model: gamma or uniform.
    #[arg(long)]
    model: NoiseModel,
    /// Number of looks (gamma model).
    #[arg(long)]
    looks: Option<u32>,
    /// Variance of η (uniform model).
    #[arg(long)]
    eta_variance: Option<f64>,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Debug, Args)]
struct BuildDatasetArgs {
    /// Folder whose subfolders are the categories.
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIGMA_MIN)]
    sigma_min: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_MAX)]
    sigma_max: f64,
    /// Noise model realizing each assigned variance: gamma or uniform.
    #[arg(long, default_value = "uniform")]
    model: NoiseModel,
    /// Warn about and skip unreadable images instead of aborting.
    #[arg(long)]
    skip_unreadable: bool,
}

#[derive(Debug, Args)]
struct BuildCrossvalArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CROSSVAL_VARIANCE)]
    eta_variance: f64,
    #[arg(long)]
    skip_unreadable: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Window radius of lee/kuan/frost.
    #[arg(long, default_value_t = 3)]
    window: usize,
    /// Frost damping factor (default: 0.4/Cn²).
    #[arg(long)]
    damping: Option<f64>,
    /// PPB bandwidth (default: 10·Cn²).
    #[arg(long)]
    h: Option<f64>,
}

impl FilterArgs {
    fn overrides(&self) -> ParamOverrides {
        ParamOverrides {
            window_radius: Some(self.window),
            frost_damping: self.damping,
            ppb_h: self.h,
        }
    }
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    /// lee, kuan, frost, ppb or cnn.
    #[arg(long)]
    filter: Algorithm,
    #[command(flatten)]
    filter_args: FilterArgs,
    /// Speckle coefficient of variation Cn (default: estimated from the image).
    #[arg(long)]
    noise_cv: Option<f64>,
    /// Model checkpoint (cnn only).
    #[arg(long)]
    model: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated algorithms; may be empty for baseline rows only.
    #[arg(long, default_value = "")]
    algorithms: String,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    filter_args: FilterArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Manifest whose val entries are used for validation.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Checkpoint of the best-validation network.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV (`step,loss,val_psnr`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    patch: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    val_interval: usize,
    #[arg(long, default_value_t = 64)]
    val_patches: usize,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 48)]
    width: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Side of the square test image; at least 64.
    #[arg(long, default_value_t = 1024)]
    size: usize,
    #[arg(long, default_value = "lee,kuan,frost,ppb")]
    algorithms: String,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    filter_args: FilterArgs,
}

/// Speckle variance of the benchmark image.
const BENCH_VARIANCE: f64 = 0.05;
const BENCH_LEVEL: f64 = 0.5;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), e);
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(Error::InvalidParameter("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {threads} threads: {e}")))?;
    if !cli.quiet {
        eprintln!(
            "despeck {} subcommand={} seed={} threads={}",
            env!("CARGO_PKG_VERSION"),
            cli.command.name(),
            cli.seed,
            threads
        );
    }
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::BuildDataset(a) => {
            let opts = BuildOptions {
                sigma_min: a.sigma_min,
                sigma_max: a.sigma_max,
                master_seed: cli.seed,
                model: a.model,
                skip_unreadable: a.skip_unreadable,
                threads: 0,
            };
            let m = build_dataset(&a.src, &a.out, &opts)?;
            log::info!("wrote {} entries to {}", m.entries.len(), a.out.display());
            Ok(())
        }
        Command::BuildCrossval(a) => {
            let opts = CrossvalOptions {
                variance: a.eta_variance,
                master_seed: cli.seed,
                skip_unreadable: a.skip_unreadable,
                threads: 0,
            };
            let m = build_crossval(&a.src, &a.out, &opts)?;
            log::info!("wrote {} entries to {}", m.entries.len(), a.out.display());
            Ok(())
        }
        Command::Verify(a) => verify(a),
        Command::Denoise(a) => denoise(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Train(a) => train(a, cli.seed),
        Command::Bench(a) => bench(a, cli.seed, threads),
    }
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let spec = match a.model {
        NoiseModel::Gamma => NoiseSpec::Gamma {
            looks: a
                .looks
                .ok_or_else(|| Error::InvalidParameter("gamma model requires --looks".into()))?,
        },
        NoiseModel::Uniform => NoiseSpec::Uniform {
            variance: a
                .eta_variance
                .ok_or_else(|| Error::InvalidParameter("uniform model requires --eta-variance".into()))?,
        },
    };
    spec.validate()?;
    let img = load_image(&a.input)?.quantized();
    let noisy = synthesize(&img, &spec, &mut SeedSpec::new(seed).derive(purpose::SYNTH, 0))?;
    save_image(&noisy, &a.output)
}

fn verify(a: &VerifyArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = verify_manifest(&manifest, &DatasetManifest::root_of(&a.manifest))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for m in &report.mismatches {
        writeln!(out, "mismatch {} {}: {}", m.id, m.noisy_path, m.reason).map_err(stdout_error)?;
    }
    writeln!(
        out,
        "checked {} entries, {} mismatches",
        report.checked,
        report.mismatches.len()
    )
    .map_err(stdout_error)?;
    if report.is_verified() {
        Ok(())
    } else {
        Err(Error::Manifest {
            path: a.manifest.clone(),
            detail: format!("{} entries do not match their seeds", report.mismatches.len()),
        })
    }
}

fn load_model(path: Option<&Path>, needed: bool) -> Result<Option<ConvNet<f32>>> {
    match path {
        Some(p) => load_checkpoint(p).map(Some),
        None if needed => Err(Error::InvalidParameter("cnn requires --model".into())),
        None => Ok(None),
    }
}

fn denoise(a: &DenoiseArgs) -> Result<()> {
    let img = load_image(&a.input)?;
    let net = load_model(a.model.as_deref(), a.filter == Algorithm::Cnn)?;
    let params = match (a.filter, a.noise_cv) {
        (Algorithm::Cnn, _) => FilterParams::default(),
        (_, Some(cv)) => a.filter_args.overrides().params(cv),
        (_, None) => a.filter_args.overrides().params(estimate_noise_cv(&img, a.filter_args.window)?),
    };
    let out = Denoiser::new(a.filter, params, net.as_ref())?.apply(&img)?;
    save_image(&out, &a.output)
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let algorithms = Algorithm::parse_list(&a.algorithms)?;
    let net = load_model(a.model.as_deref(), algorithms.contains(&Algorithm::Cnn))?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let rows = evaluate_manifest(
        &manifest,
        &DatasetManifest::root_of(&a.manifest),
        &algorithms,
        &a.filter_args.overrides(),
        net.as_ref(),
    )?;
    write_report(&rows, create(&a.report)?)
}

fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let val = a.val_manifest.as_deref().map(DatasetManifest::load).transpose()?;
    let val_root = a.val_manifest.as_deref().map(DatasetManifest::root_of);
    let cfg = TrainConfig {
        patch: a.patch,
        batch: a.batch,
        steps: a.steps,
        val_interval: a.val_interval,
        master_seed: seed,
        checkpoint: None,
        depth: a.depth,
        width: a.width,
        val_patches: a.val_patches,
    };
    let outcome = train_manifest(
        &manifest,
        &DatasetManifest::root_of(&a.manifest),
        val.as_ref().zip(val_root.as_deref()),
        &cfg,
    )?;
    save_checkpoint(&outcome.best, &a.out)?;
    if let Some(path) = &a.log {
        write_train_log(&outcome.log, create(path)?)?;
    }
    log::info!(
        "best val psnr {:.3} dB at step {} (noisy {:.3} dB)",
        outcome.best_val_psnr,
        outcome.best_step,
        outcome.noisy_val_psnr
    );
    Ok(())
}

/// The benchmark image: constant [`BENCH_LEVEL`] speckled at [`BENCH_VARIANCE`].
fn bench_image(size: usize, seed: u64) -> Result<Image> {
    let clean = Image::constant(size, size, BENCH_LEVEL)?;
    synthesize(
        &clean,
        &NoiseSpec::Uniform {
            variance: BENCH_VARIANCE,
        },
        &mut SeedSpec::new(seed).derive(purpose::BENCH_IMAGE, 0),
    )
}

fn bench(a: &BenchArgs, seed: u64, threads: usize) -> Result<()> {
    if a.size < 64 {
        return Err(Error::InvalidParameter(format!("--size must be at least 64, got {}", a.size)));
    }
    let algorithms = Algorithm::parse_list(&a.algorithms)?;
    if algorithms.is_empty() {
        return Err(Error::InvalidParameter("--algorithms is empty".into()));
    }
    let net = load_model(a.model.as_deref(), algorithms.contains(&Algorithm::Cnn))?;
    let img = bench_image(a.size, seed)?;
    let params = a.filter_args.overrides().params(BENCH_VARIANCE.sqrt());
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "algorithm,median_s,repeats,threads").map_err(stdout_error)?;
    for alg in algorithms {
        let den = Denoiser::new(alg, params, net.as_ref())?;
        let t = time_denoiser(&den, &img, a.repeats)?;
        writeln!(out, "{},{},{},{}", alg, t, a.repeats, threads).map_err(stdout_error)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn stdout_error(e: io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}
