//! JSON run configuration and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::DegradeSpec;
use crate::error::{ensure, Error, Result};
use crate::metrics::Direction;
use crate::nn::Architecture;
use crate::optim::{AdamConfig, LrSchedule};
use crate::pipelines::{GaussianTaskConfig, HolefillTaskConfig, MixedTaskConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Synth,
    Simulate,
    Denoise,
    Mixed,
    Holefill,
    Analyze,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Synth => "synth",
            Task::Simulate => "simulate",
            Task::Denoise => "denoise",
            Task::Mixed => "mixed",
            Task::Holefill => "holefill",
            Task::Analyze => "analyze",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub h: usize,
    pub w: usize,
    pub b: usize,
    pub rank: usize,
    /// Blur width (pixels) of the spatial abundance maps.
    pub smoothness: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { h: 64, w: 64, b: 16, rank: 4, smoothness: 2.0 }
    }
}

/// Network shape; the band count always comes from the input cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub multiplier: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let std = Architecture::standard(1);
        Self { hidden: std.hidden, blocks: std.blocks, kernel: std.kernel, multiplier: std.multiplier }
    }
}

impl NetworkConfig {
    pub fn architecture(&self, bands: usize) -> Result<Architecture> {
        let arch = Architecture { bands, hidden: self.hidden, blocks: self.blocks, kernel: self.kernel, multiplier: self.multiplier };
        arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(arch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub psnr: bool,
    /// Reference cube for PSNR.
    pub reference: Option<PathBuf>,
    pub peak: f64,
    pub sigma: bool,
    pub svd: bool,
    pub hist: bool,
    /// Odd counts centre a bin on zero.
    pub bins: usize,
    pub directions: Vec<Direction>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            psnr: false,
            reference: None,
            peak: 1.0,
            sigma: false,
            svd: false,
            hist: false,
            bins: 101,
            directions: vec![Direction::X, Direction::Y, Direction::Z, Direction::DiagYz],
        }
    }
}

/// Everything a run needs. Every key can come from a JSON file and be
/// overridden by the command-line flag of the same name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Sampling mask cube (0/1) for hole-filling.
    pub mask: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub synth: SynthConfig,
    pub degrade: DegradeSpec,
    pub network: NetworkConfig,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    pub gaussian: GaussianTaskConfig,
    pub mixed: MixedTaskConfig,
    pub holefill: HolefillTaskConfig,
    pub analyze: AnalyzeConfig,
}

impl RunConfig {
    /// Parses JSON, reporting the offending key path and position on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!("at `{path}` (line {}, column {}): {inner}", inner.line(), inner.column()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn input(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| Error::Config("an input path (-i/--input) is required".into()))
    }

    pub fn output(&self) -> Result<&Path> {
        self.output.as_deref().ok_or_else(|| Error::Config("an output path (-o/--output) is required".into()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.threads != Some(0), Config, "threads must be at least 1");
        self.gaussian.validate()?;
        self.mixed.validate()?;
        ensure!(self.schedule.initial_lr > 0.0, Config, "initial_lr must be positive");
        ensure!(self.schedule.floor >= 0.0, Config, "floor must be >= 0");
        let AdamConfig { beta1, beta2, eps } = self.adam;
        ensure!(
            (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0,
            Config,
            "adam needs beta1, beta2 in [0, 1) and eps > 0"
        );
        Ok(())
    }
}

/// Companion artifact path: `out/restored.hsc` + `loss.csv` ->
/// `out/restored.loss.csv`.
pub fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Clone, Debug, Serialize)]
pub struct ArtifactRecord {
    pub path: PathBuf,
    pub bytes: u64,
    /// FNV-1a 64 of the file contents, hex.
    pub fnv1a64: String,
}

impl ArtifactRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let data = std::fs::read(path)?;
        Ok(Self { path: path.to_path_buf(), bytes: data.len() as u64, fnv1a64: format!("{:016x}", fnv1a64(&data)) })
    }
}

pub fn fnv1a64(data: &[u8]) -> u64 {
    data.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Written next to every artifact-producing run; the embedded config
/// reproduces the run.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub threads: usize,
    pub config: RunConfig,
    pub artifacts: Vec<ArtifactRecord>,
}
