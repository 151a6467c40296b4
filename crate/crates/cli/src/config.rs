//! Run configuration: a single TOML file with documented keys. Unknown
//! keys are rejected; parse errors carry the offending line/key.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use din_core::data::{DegradationKind, DegradationSpec};
use din_core::model::{FusionMode, ModelConfig, Task};
use din_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    /// Upper bound on worker parallelism. Compute kernels are sequential
    /// and deterministic; this knob is validated and reserved.
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub model: ModelSection,
    #[serde(default)]
    pub degradation: Option<DegradationSection>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub train: TrainSection,
}

fn default_seed() -> u64 {
    0
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/out")
}
fn default_precision() -> Precision {
    Precision::F32
}
fn default_threads() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub task: String,
    #[serde(default)]
    pub scale: Option<usize>,
    /// Branch count M.
    #[serde(default = "d_branches")]
    pub branches: usize,
    /// WRDBs per branch, D.
    #[serde(default = "d_blocks")]
    pub wrdbs_per_branch: usize,
    /// RDBs per WRDB, B.
    #[serde(default = "d_rdbs")]
    pub rdbs_per_wrdb: usize,
    /// Conv layers per RDB, K.
    #[serde(default = "d_layers")]
    pub convs_per_rdb: usize,
    #[serde(default = "d_growth")]
    pub growth: usize,
    #[serde(default = "d_channels")]
    pub channels: usize,
    #[serde(default = "d_reduction")]
    pub reduction: usize,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_fusion")]
    pub fusion: String,
}

fn d_branches() -> usize {
    4
}
fn d_blocks() -> usize {
    5
}
fn d_rdbs() -> usize {
    3
}
fn d_layers() -> usize {
    6
}
fn d_growth() -> usize {
    32
}
fn d_channels() -> usize {
    64
}
fn d_reduction() -> usize {
    4
}
fn d_gamma() -> f64 {
    0.1
}
fn d_fusion() -> String {
    "asyca".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSection {
    pub kind: String,
    #[serde(default)]
    pub scale: Option<usize>,
    #[serde(default = "d_blur_kernel")]
    pub blur_kernel_size: usize,
    #[serde(default = "d_blur_sigma")]
    pub blur_sigma: f64,
    #[serde(default = "d_noise")]
    pub noise_level: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_blur_kernel() -> usize {
    7
}
fn d_blur_sigma() -> f64 {
    1.6
}
fn d_noise() -> f64 {
    30.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_decay_steps")]
    pub lr_decay_steps: u64,
    #[serde(default = "d_decay_factor")]
    pub lr_decay_factor: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            lr: d_lr(),
            lr_decay_steps: d_decay_steps(),
            lr_decay_factor: d_decay_factor(),
        }
    }
}

fn d_lr() -> f64 {
    1e-4
}
fn d_decay_steps() -> u64 {
    2000
}
fn d_decay_factor() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub root: PathBuf,
    #[serde(default = "d_patch")]
    pub patch_size: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
}

fn d_patch() -> usize {
    48
}
fn d_batch() -> usize {
    8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default = "d_ckpt_every")]
    pub checkpoint_every: u64,
    #[serde(default = "d_log_every")]
    pub log_every: u64,
    #[serde(default = "d_augment")]
    pub augment: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: d_steps(),
            checkpoint_every: d_ckpt_every(),
            log_every: d_log_every(),
            augment: d_augment(),
        }
    }
}

fn d_steps() -> u64 {
    5000
}
fn d_ckpt_every() -> u64 {
    1000
}
fn d_log_every() -> u64 {
    50
}
fn d_augment() -> bool {
    true
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads < 1 {
            return Err(Error::InvalidArgument("threads must be >= 1".into()));
        }
        self.model_config()?;
        if let Some(spec) = self.degradation_spec()? {
            spec.validate()?;
        }
        if self.optimizer.lr < 0.0 {
            return Err(Error::InvalidArgument("lr must be non-negative".into()));
        }
        if let Some(data) = &self.data {
            if data.batch_size == 0 || data.patch_size == 0 {
                return Err(Error::InvalidArgument(
                    "batch_size and patch_size must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let task = Task::parse(&self.model.task).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown task '{}' (expected sr/derain/deblur/dehaze)",
                self.model.task
            ))
        })?;
        let fusion = FusionMode::parse(&self.model.fusion).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown fusion '{}' (expected asyca/sum/concat/se)",
                self.model.fusion
            ))
        })?;
        let scale = self.model.scale.unwrap_or(match task {
            Task::Sr => 2,
            Task::Derain => 1,
            Task::Deblur | Task::Dehaze => 4,
        });
        let cfg = ModelConfig {
            task,
            scale,
            branches: self.model.branches,
            blocks_per_branch: self.model.wrdbs_per_branch,
            rdbs_per_block: self.model.rdbs_per_wrdb,
            layers_per_rdb: self.model.convs_per_rdb,
            growth: self.model.growth,
            channels: self.model.channels,
            reduction: self.model.reduction,
            gamma: self.model.gamma,
            fusion,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn degradation_spec(&self) -> Result<Option<DegradationSpec>> {
        let Some(d) = &self.degradation else {
            return Ok(None);
        };
        let kind = DegradationKind::parse(&d.kind).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown degradation kind '{}'", d.kind))
        })?;
        let scale = d.scale.unwrap_or(match kind {
            DegradationKind::Bi => 2,
            DegradationKind::Bd | DegradationKind::Dn => 3,
        });
        Ok(Some(DegradationSpec {
            kind,
            scale,
            blur_kernel_size: d.blur_kernel_size,
            blur_sigma: d.blur_sigma,
            noise_level: d.noise_level,
            seed: d.seed,
        }))
    }
}
