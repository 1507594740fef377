//! The `hsi-restore` command line: one subcommand per operation, JSON
//! configs with flag overrides, and a manifest beside every artifact.

mod config;

pub use config::{
    fnv1a64, sibling, AnalyzeConfig, ArtifactRecord, Manifest, NetworkConfig, RunConfig, SynthConfig, Task,
};

use std::ffi::OsString;
use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cube::{load_cube, save_cube, write_atomically, HsiCube};
use crate::degrade::{apply_mask, synth_lowrank_cube, RandomLines, SamplingMask};
use crate::error::{Error, Result};
use crate::metrics::{adjacent_diff_histogram, mode_singular_values, psnr};
use crate::nn::{save_checkpoint, SeparableCnn};
use crate::noise::estimate_sigma;
use crate::optim::{AdamConfig, LrSchedule, ModelAdam};
use crate::pipelines::{
    loss_csv, train_gaussian, train_holefill, train_mixed, EpochLog, GaussianTaskConfig, HolefillTaskConfig,
    MixedTaskConfig,
};
use crate::rng::Rng;

fn dflt(text: &str, value: impl Display) -> String {
    format!("{text} [default: {value}]")
}

fn pair(v: [f64; 2]) -> String {
    format!("{},{}", v[0], v[1])
}

#[derive(Debug, Parser)]
#[command(name = "hsi-restore", version, about = "Self-supervised hyperspectral cube restoration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic low-rank cube.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, help = dflt("Height", SynthConfig::default().h))]
        h: Option<usize>,
        #[arg(long, help = dflt("Width", SynthConfig::default().w))]
        w: Option<usize>,
        #[arg(long, help = dflt("Bands", SynthConfig::default().b))]
        b: Option<usize>,
        #[arg(long, help = dflt("Spectral rank", SynthConfig::default().rank))]
        rank: Option<usize>,
        #[arg(long, help = dflt("Blur width of the abundance maps, pixels", SynthConfig::default().smoothness))]
        smoothness: Option<f64>,
    },
    /// Apply seeded degradations to a clean cube.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, alias = "sigma", help = dflt("Gaussian noise standard deviation (alias --sigma)", 0.0))]
        gaussian_sigma: Option<f64>,
        #[arg(long, help = dflt("Salt-and-pepper density", 0.0))]
        impulse_density: Option<f64>,
        #[arg(long, help = "Fraction of bands that receive random line deficits [default: none]")]
        band_fraction: Option<f64>,
        #[arg(long, help = dflt("Random lines per affected band", 1))]
        per_band: Option<usize>,
        #[arg(long, help = "Keep each voxel with this probability and write the mask [default: none]")]
        mask_rate: Option<f64>,
    },
    /// Noisier-target Gaussian denoising.
    Denoise {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        network: NetworkArgs,
        #[command(flatten)]
        optim: OptimArgs,
        #[command(flatten)]
        task: GaussianArgs,
    },
    /// Two-network removal of mixed Gaussian and sparse anomalies.
    Mixed {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        network: NetworkArgs,
        #[command(flatten)]
        optim: OptimArgs,
        #[command(flatten)]
        task: MixedArgs,
    },
    /// Fill unobserved voxels given a sampling mask.
    Holefill {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        network: NetworkArgs,
        #[command(flatten)]
        optim: OptimArgs,
        #[command(flatten)]
        task: HolefillArgs,
    },
    /// PSNR, noise level, singular spectra and difference histograms as CSV.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, help = "Per-band PSNR against --ref")]
        psnr: bool,
        #[arg(long = "ref", value_name = "PATH", help = "Reference cube for --psnr")]
        reference: Option<PathBuf>,
        #[arg(long, help = dflt("PSNR peak value", AnalyzeConfig::default().peak))]
        peak: Option<f64>,
        #[arg(long, help = "Blind per-band noise estimate")]
        sigma: bool,
        #[arg(long, help = "Singular values of the three mode unfoldings")]
        svd: bool,
        #[arg(long, help = "Adjacent-difference histograms")]
        hist: bool,
        #[arg(long, help = dflt("Histogram bins over [-1, 1]", AnalyzeConfig::default().bins))]
        bins: Option<usize>,
        #[arg(
            long,
            value_delimiter = ',',
            help = "Histogram directions: x, y, z, diag_yz, anti_diag_yz [default: x,y,z,diag_yz]"
        )]
        directions: Option<Vec<String>>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(short, long, help = "Input cube (HSC1)")]
    pub input: Option<PathBuf>,
    #[arg(short, long, help = "Output path")]
    pub output: Option<PathBuf>,
    #[arg(long, help = "JSON run config; flags override its keys")]
    pub config: Option<PathBuf>,
    #[arg(long, help = dflt("Run seed", 0))]
    pub seed: Option<u64>,
    #[arg(long, help = "Worker threads [default: all cores]")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    #[arg(long, help = dflt("Hidden point-wise width", NetworkConfig::default().hidden))]
    pub hidden: Option<usize>,
    #[arg(long, help = dflt("Separable blocks", NetworkConfig::default().blocks))]
    pub blocks: Option<usize>,
    #[arg(long, help = dflt("Depth-wise kernel size", NetworkConfig::default().kernel))]
    pub kernel: Option<usize>,
    #[arg(long, help = dflt("Depth-wise channel multiplier", NetworkConfig::default().multiplier))]
    pub multiplier: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, alias = "lr", help = dflt("Initial learning rate (alias --lr)", LrSchedule::default().initial_lr))]
    pub initial_lr: Option<f64>,
    #[arg(long, help = dflt("Epochs between halvings, 0 = constant", LrSchedule::default().halve_every))]
    pub halve_every: Option<usize>,
    #[arg(long, help = dflt("Learning-rate floor", LrSchedule::default().floor))]
    pub floor: Option<f64>,
    #[arg(long, help = dflt("Adam beta1", AdamConfig::default().beta1))]
    pub beta1: Option<f64>,
    #[arg(long, help = dflt("Adam beta2", AdamConfig::default().beta2))]
    pub beta2: Option<f64>,
    #[arg(long, help = dflt("Adam eps", AdamConfig::default().eps))]
    pub eps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GaussianArgs {
    #[arg(long, help = dflt("Training epochs", GaussianTaskConfig::default().epochs))]
    pub epochs: Option<usize>,
    #[arg(long, help = dflt("Patches per minibatch", GaussianTaskConfig::default().batch))]
    pub batch: Option<usize>,
    #[arg(long, help = dflt("Square patch side", GaussianTaskConfig::default().patch))]
    pub patch: Option<usize>,
    #[arg(long, help = dflt("Patch grid stride", GaussianTaskConfig::default().stride))]
    pub stride: Option<usize>,
    #[arg(long, help = dflt("Epochs between input refreshes, 0 = never", GaussianTaskConfig::default().refresh_every))]
    pub refresh_every: Option<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        help = dflt("Noise-level jitter range lo,hi", pair(GaussianTaskConfig::default().alpha_range))
    )]
    pub alpha_range: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct MixedArgs {
    #[arg(long, help = dflt("Training epochs", MixedTaskConfig::default().epochs))]
    pub epochs: Option<usize>,
    #[arg(long, help = dflt("Patches per minibatch", MixedTaskConfig::default().batch))]
    pub batch: Option<usize>,
    #[arg(long, help = dflt("Square patch side", MixedTaskConfig::default().patch))]
    pub patch: Option<usize>,
    #[arg(long, help = dflt("Patch grid stride", MixedTaskConfig::default().stride))]
    pub stride: Option<usize>,
    #[arg(long, help = dflt("Weight of the sparse-residual term", MixedTaskConfig::default().lambda))]
    pub lambda: Option<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        help = dflt("Extra-noise level range lo,hi", pair(MixedTaskConfig::default().train_sigma_range))
    )]
    pub train_sigma_range: Option<Vec<f64>>,
    #[arg(long, help = "Keep the second network fixed")]
    pub freeze_phi2: bool,
}

#[derive(Debug, Args)]
pub struct HolefillArgs {
    #[arg(long, help = "Sampling mask cube (HSC1 of 0/1)")]
    pub mask: Option<PathBuf>,
    #[arg(long, help = dflt("Training epochs", HolefillTaskConfig::default().epochs))]
    pub epochs: Option<usize>,
    #[arg(long, help = dflt("Patches per minibatch", HolefillTaskConfig::default().batch))]
    pub batch: Option<usize>,
    #[arg(long, help = dflt("Square patch side", HolefillTaskConfig::default().patch))]
    pub patch: Option<usize>,
    #[arg(long, help = dflt("Patch grid stride", HolefillTaskConfig::default().stride))]
    pub stride: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn range(key: &str, v: Option<Vec<f64>>) -> Result<Option<[f64; 2]>> {
    match v.as_deref() {
        None => Ok(None),
        Some(&[lo, hi]) => Ok(Some([lo, hi])),
        Some(other) => Err(Error::Config(format!("--{key} takes two values lo,hi, got {}", other.len()))),
    }
}

impl NetworkArgs {
    fn apply(self, cfg: &mut NetworkConfig) {
        set(&mut cfg.hidden, self.hidden);
        set(&mut cfg.blocks, self.blocks);
        set(&mut cfg.kernel, self.kernel);
        set(&mut cfg.multiplier, self.multiplier);
    }
}

impl OptimArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.schedule.initial_lr, self.initial_lr);
        set(&mut cfg.schedule.halve_every, self.halve_every);
        set(&mut cfg.schedule.floor, self.floor);
        set(&mut cfg.adam.beta1, self.beta1);
        set(&mut cfg.adam.beta2, self.beta2);
        set(&mut cfg.adam.eps, self.eps);
    }
}

/// Loads `--config` (if any), applies flag overrides and validates.
pub fn resolve(command: Command) -> Result<RunConfig> {
    let load = |common: &CommonArgs| match &common.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    };
    let apply_common = |cfg: &mut RunConfig, common: CommonArgs| {
        if common.input.is_some() {
            cfg.input = common.input;
        }
        if common.output.is_some() {
            cfg.output = common.output;
        }
        set(&mut cfg.seed, common.seed);
        if common.threads.is_some() {
            cfg.threads = common.threads;
        }
    };
    let (task, cfg) = match command {
        Command::Synth { common, h, w, b, rank, smoothness } => {
            let mut cfg = load(&common)?;
            apply_common(&mut cfg, common);
            set(&mut cfg.synth.h, h);
            set(&mut cfg.synth.w, w);
            set(&mut cfg.synth.b, b);
            set(&mut cfg.synth.rank, rank);
            set(&mut cfg.synth.smoothness, smoothness);
            (Task::Synth, cfg)
        }
        Command::Simulate { common, gaussian_sigma, impulse_density, band_fraction, per_band, mask_rate } => {
            let mut cfg = load(&common)?;
            apply_common(&mut cfg, common);
            set(&mut cfg.degrade.gaussian_sigma, gaussian_sigma);
            set(&mut cfg.degrade.impulse_density, impulse_density);
            if band_fraction.is_some() || per_band.is_some() {
                let current = cfg.degrade.random_lines.unwrap_or(RandomLines { band_fraction: 0.1, per_band: 1 });
                cfg.degrade.random_lines = Some(RandomLines {
                    band_fraction: band_fraction.unwrap_or(current.band_fraction),
                    per_band: per_band.unwrap_or(current.per_band),
                });
            }
            if mask_rate.is_some() {
                cfg.degrade.mask_rate = mask_rate;
            }
            cfg.degrade.seed = cfg.seed;
            (Task::Simulate, cfg)
        }
        Command::Denoise { common, network, optim, task } => {
            let mut cfg = load(&common)?;
            apply_common(&mut cfg, common);
            network.apply(&mut cfg.network);
            optim.apply(&mut cfg);
            let g = &mut cfg.gaussian;
            set(&mut g.epochs, task.epochs);
            set(&mut g.batch, task.batch);
            set(&mut g.patch, task.patch);
            set(&mut g.stride, task.stride);
            set(&mut g.refresh_every, task.refresh_every);
            set(&mut g.alpha_range, range("alpha-range", task.alpha_range)?);
            (Task::Denoise, cfg)
        }
        Command::Mixed { common, network, optim, task } => {
            let mut cfg = load(&common)?;
            apply_common(&mut cfg, common);
            network.apply(&mut cfg.network);
            optim.apply(&mut cfg);
            let m = &mut cfg.mixed;
            set(&mut m.epochs, task.epochs);
            set(&mut m.batch, task.batch);
            set(&mut m.patch, task.patch);
            set(&mut m.stride, task.stride);
            set(&mut m.lambda, task.lambda);
            set(&mut m.train_sigma_range, range("train-sigma-range", task.train_sigma_range)?);
            m.freeze_phi2 |= task.freeze_phi2;
            (Task::Mixed, cfg)
        }
        Command::Holefill { common, network, optim, task } => {
            let mut cfg = load(&common)?;
            apply_common(&mut cfg, common);
            network.apply(&mut cfg.network);
            optim.apply(&mut cfg);
            if task.mask.is_some() {
                cfg.mask = task.mask;
            }
            let hf = &mut cfg.holefill;
            set(&mut hf.epochs, task.epochs);
            set(&mut hf.batch, task.batch);
            set(&mut hf.patch, task.patch);
            set(&mut hf.stride, task.stride);
            (Task::Holefill, cfg)
        }
        Command::Analyze { common, psnr, reference, peak, sigma, svd, hist, bins, directions } => {
            let mut cfg = load(&common)?;
            apply_common(&mut cfg, common);
            let a = &mut cfg.analyze;
            a.psnr |= psnr;
            a.sigma |= sigma;
            a.svd |= svd;
            a.hist |= hist;
            if reference.is_some() {
                a.reference = reference;
            }
            set(&mut a.peak, peak);
            set(&mut a.bins, bins);
            if let Some(names) = directions {
                a.directions =
                    names.iter().map(|n| n.parse()).collect::<Result<_>>().map_err(|e| Error::Config(e.to_string()))?;
            }
            (Task::Analyze, cfg)
        }
    };
    let mut cfg = cfg;
    cfg.task = Some(task);
    cfg.validate().map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    Ok(cfg)
}

/// An error tagged with the module it came from.
#[derive(Debug)]
pub struct Failure {
    pub module: &'static str,
    pub error: Error,
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        if matches!(self.error, Error::Config(_)) {
            2
        } else {
            1
        }
    }
}

trait Tag<T> {
    fn tag(self, module: &'static str) -> Result<T, Failure>;
}

impl<T> Tag<T> for Result<T> {
    fn tag(self, module: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { module, error })
    }
}

fn epoch_line(e: &EpochLog) {
    match e.sigma_est {
        Some(s) => eprintln!("epoch {} loss {:.6e} lr {} sigma {:.5}", e.epoch, e.loss, e.lr, s),
        None => eprintln!("epoch {} loss {:.6e} lr {}", e.epoch, e.loss, e.lr),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomically(path, text.as_bytes()).tag("cli")
}

fn finish(cfg: &RunConfig, threads: usize, artifacts: &[PathBuf]) -> Result<(), Failure> {
    let output = cfg.output().tag("cli")?;
    let records = artifacts.iter().map(|p| ArtifactRecord::of(p)).collect::<Result<Vec<_>>>().tag("cli")?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cfg.task.map_or("unknown", Task::name),
        threads,
        config: cfg.clone(),
        artifacts: records,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure { module: "cli", error: Error::Config(e.to_string()) })?;
    text.push('\n');
    write_text(&sibling(output, "manifest.json"), &text)
}

fn load_input(cfg: &RunConfig) -> Result<HsiCube, Failure> {
    let path = cfg.input().tag("cli")?;
    load_cube(path).tag("cube-io")
}

fn init_model(cfg: &RunConfig, bands: usize, stream: u64) -> Result<SeparableCnn<f32>, Failure> {
    let arch = cfg.network.architecture(bands).tag("cli")?;
    SeparableCnn::init(&arch, &mut Rng::stream(cfg.seed, stream)).tag("nn-core")
}

/// Runs a resolved config on the current thread pool.
pub fn execute(cfg: &RunConfig, threads: usize) -> Result<(), Failure> {
    let task = cfg.task.ok_or_else(|| Failure { module: "cli", error: Error::Config("no task selected".into()) })?;
    match task {
        Task::Synth => {
            let s = &cfg.synth;
            let cube = synth_lowrank_cube(s.h, s.w, s.b, s.rank, s.smoothness, &mut Rng::new(cfg.seed)).tag("degrade")?;
            let out = cfg.output().tag("cli")?;
            save_cube(&cube, out).tag("cube-io")?;
            finish(cfg, threads, &[out.to_path_buf()])
        }
        Task::Simulate => {
            let clean = load_input(cfg)?;
            let (degraded, mask) = cfg.degrade.apply(&clean).tag("degrade")?;
            let out = cfg.output().tag("cli")?;
            save_cube(&degraded, out).tag("cube-io")?;
            let mut artifacts = vec![out.to_path_buf()];
            if let Some(mask) = mask {
                let path = sibling(out, "mask.hsc");
                save_cube(&mask.to_cube(), &path).tag("cube-io")?;
                artifacts.push(path);
            }
            finish(cfg, threads, &artifacts)
        }
        Task::Denoise => {
            let y = load_input(cfg)?;
            let out = cfg.output().tag("cli")?;
            let mut model = init_model(cfg, y.bands(), 0)?;
            let mut opt = ModelAdam::new(&model, cfg.adam);
            let result = train_gaussian(&y, &cfg.gaussian, &mut model, &mut opt, &cfg.schedule, &mut Rng::stream(cfg.seed, 1), &mut epoch_line)
                .tag("pipelines")?;
            save_cube(&result.restored, out).tag("cube-io")?;
            let ckpt = sibling(out, "hsm");
            save_checkpoint(&model, &ckpt).tag("nn-core")?;
            let csv = sibling(out, "loss.csv");
            write_text(&csv, &loss_csv(&result.log))?;
            finish(cfg, threads, &[out.to_path_buf(), ckpt, csv])
        }
        Task::Mixed => {
            let y = load_input(cfg)?;
            let out = cfg.output().tag("cli")?;
            let mut phi1 = init_model(cfg, y.bands(), 0)?;
            let mut phi2 = init_model(cfg, y.bands(), 2)?;
            let mut opt1 = ModelAdam::new(&phi1, cfg.adam);
            let mut opt2 = ModelAdam::new(&phi2, cfg.adam);
            let result = train_mixed(
                &y,
                &cfg.mixed,
                &mut phi1,
                &mut phi2,
                &mut opt1,
                &mut opt2,
                &cfg.schedule,
                &mut Rng::stream(cfg.seed, 1),
                &mut epoch_line,
            )
            .tag("pipelines")?;
            save_cube(&result.restored, out).tag("cube-io")?;
            let (c1, c2) = (sibling(out, "phi1.hsm"), sibling(out, "phi2.hsm"));
            save_checkpoint(&phi1, &c1).tag("nn-core")?;
            save_checkpoint(&phi2, &c2).tag("nn-core")?;
            let csv = sibling(out, "loss.csv");
            write_text(&csv, &loss_csv(&result.log))?;
            finish(cfg, threads, &[out.to_path_buf(), c1, c2, csv])
        }
        Task::Holefill => {
            let y = load_input(cfg)?;
            let out = cfg.output().tag("cli")?;
            let mask_path = cfg.mask.as_deref().ok_or_else(|| Failure {
                module: "cli",
                error: Error::Config("holefill needs a mask cube (--mask)".into()),
            })?;
            let mask = SamplingMask::from_cube(&load_cube(mask_path).tag("cube-io")?).tag("degrade")?;
            let y_masked = apply_mask(&y, &mask).tag("degrade")?;
            let mut model = init_model(cfg, y.bands(), 0)?;
            let mut opt = ModelAdam::new(&model, cfg.adam);
            let result = train_holefill(
                &y_masked,
                &mask,
                &cfg.holefill,
                &mut model,
                &mut opt,
                &cfg.schedule,
                &mut Rng::stream(cfg.seed, 1),
                &mut epoch_line,
            )
            .tag("pipelines")?;
            save_cube(&result.restored, out).tag("cube-io")?;
            let ckpt = sibling(out, "hsm");
            save_checkpoint(&model, &ckpt).tag("nn-core")?;
            let csv = sibling(out, "loss.csv");
            write_text(&csv, &loss_csv(&result.log))?;
            finish(cfg, threads, &[out.to_path_buf(), ckpt, csv])
        }
        Task::Analyze => {
            let text = analyze(cfg)?;
            print!("{text}");
            match &cfg.output {
                Some(out) => {
                    write_text(out, &text)?;
                    finish(cfg, threads, std::slice::from_ref(out))
                }
                None => Ok(()),
            }
        }
    }
}

/// The CSV sections requested by `cfg.analyze`, separated by blank lines.
pub fn analyze(cfg: &RunConfig) -> Result<String, Failure> {
    let a = &cfg.analyze;
    if !(a.psnr || a.sigma || a.svd || a.hist) {
        return Err(Failure {
            module: "cli",
            error: Error::Config("analyze needs at least one of --psnr, --sigma, --svd, --hist".into()),
        });
    }
    let cube = load_input(cfg)?;
    let mut sections = Vec::new();
    if a.psnr {
        let reference = a.reference.as_deref().ok_or_else(|| Failure {
            module: "cli",
            error: Error::Config("--psnr needs a reference cube (--ref)".into()),
        })?;
        let reference = load_cube(reference).tag("cube-io")?;
        let report = psnr(&reference, &cube, a.peak).tag("metrics")?;
        let mut s = String::from("band,psnr\n");
        for (b, p) in report.per_band.iter().enumerate() {
            let _ = writeln!(s, "{b},{p}");
        }
        let _ = writeln!(s, "mean,{}", report.mean);
        sections.push(s);
    }
    if a.sigma {
        let est = estimate_sigma(&cube).tag("noise-est")?;
        let mut s = String::from("band,sigma\n");
        for (b, v) in est.per_band.iter().enumerate() {
            let _ = writeln!(s, "{b},{v}");
        }
        let _ = writeln!(s, "median,{}", est.sigma);
        sections.push(s);
    }
    if a.svd {
        let mut s = String::from("mode,index,sigma\n");
        for mode in 1..=3 {
            let spectrum = mode_singular_values(&cube, mode).tag("metrics")?;
            for (i, v) in spectrum.values.iter().enumerate() {
                let _ = writeln!(s, "{mode},{i},{v}");
            }
        }
        sections.push(s);
    }
    if a.hist {
        let mut s = String::from("direction,bin_left,bin_right,count\n");
        for &d in &a.directions {
            let hist = adjacent_diff_histogram(&cube, d, a.bins).tag("metrics")?;
            for (i, c) in hist.counts.iter().enumerate() {
                let _ = writeln!(s, "{d},{},{},{c}", hist.bin_edges[i], hist.bin_edges[i + 1]);
            }
        }
        sections.push(s);
    }
    Ok(sections.join("\n"))
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 2 for usage or config errors, 1 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match resolve(cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error[config]: {e}");
            return 2;
        }
    };
    let threads = cfg.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error[cli]: cannot start {threads} worker threads: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(&cfg, threads)) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error[{}]: {}", f.module, f.error);
            f.exit_code()
        }
    }
}
