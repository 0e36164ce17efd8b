//! Versioned YAML run configuration with `key.path=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use promptmr_core::nn::PromptLevel;
use promptmr_core::optim::{AdamWConfig, LrSchedule};
use promptmr_core::physics::{FrameAxis, MaskScheme};
use promptmr_core::refine::RefineConfig;
use promptmr_core::unrolled::{ModelFamily, UnrolledConfig};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const DATA_DIR_ENV: &str = "PROMPTMR_DATA_DIR";
pub const FROZEN_CONFIG: &str = "config.resolved.yaml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Temporal,
    Contrast,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Temporal, Task::Contrast];

    pub fn axis(self) -> FrameAxis {
        match self {
            Task::Temporal => FrameAxis::Temporal,
            Task::Contrast => FrameAxis::Contrast,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Temporal => "temporal",
            Task::Contrast => "contrast",
        }
    }
}

/// Task set a model is trained on; `all` mixes both types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskSet {
    Temporal,
    Contrast,
    #[serde(alias = "all-in-one")]
    All,
}

impl TaskSet {
    pub fn includes(self, t: Task) -> bool {
        matches!(
            (self, t),
            (TaskSet::All, _) | (TaskSet::Temporal, Task::Temporal) | (TaskSet::Contrast, Task::Contrast)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root; falls back to `$PROMPTMR_DATA_DIR`, then `./data`.
    pub root: Option<PathBuf>,
    pub grid: [usize; 2],
    pub n_coils: usize,
    pub n_frames: usize,
    pub motion_amplitude: f64,
    pub noise_std: f64,
    /// Cases per task type.
    pub cases: SplitCounts,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            grid: [64, 64],
            n_coils: 4,
            n_frames: 12,
            motion_amplitude: 0.05,
            noise_std: 0.005,
            cases: SplitCounts { train: 40, val: 10, test: 10 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub scheme: MaskScheme,
    pub acs_lines: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { scheme: MaskScheme::Equispaced, acs_lines: 8 }
    }
}

/// Compact Stage-I architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_family: ModelFamily,
    pub cascades: usize,
    pub adjacency: usize,
    pub share_weights: bool,
    pub denoiser_width: usize,
    pub sme_width: usize,
    pub cab_per_block: usize,
    pub reduction: usize,
    pub prompt_components: usize,
    /// Prompt spatial size per decoder level, finest first.
    pub prompt_sizes: [usize; 3],
    /// For the baseline family: pick the denoiser width whose parameter
    /// count is closest to the prompt model of the same configuration.
    pub match_params: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_family: ModelFamily::Promptmr,
            cascades: 12,
            adjacency: 2,
            share_weights: false,
            denoiser_width: 32,
            sme_width: 8,
            cab_per_block: 2,
            reduction: 4,
            prompt_components: 5,
            prompt_sizes: [24, 12, 6],
            match_params: true,
        }
    }
}

impl ModelConfig {
    /// Full network configuration at an explicit denoiser width.
    pub fn with_width(&self, family: ModelFamily, den_width: usize) -> UnrolledConfig {
        let mut c = UnrolledConfig::new(family, self.cascades, self.adjacency, den_width, self.sme_width);
        c.share_weights = self.share_weights;
        for net in [&mut c.denoiser, &mut c.sme] {
            net.cab_per_block = self.cab_per_block;
            net.reduction = self.reduction;
            if let Some(p) = net.prompt.as_mut() {
                for (i, l) in p.levels.iter_mut().enumerate() {
                    *l = PromptLevel {
                        n_p: self.prompt_components,
                        h_p: self.prompt_sizes[i],
                        w_p: self.prompt_sizes[i],
                        c_p: l.c_p,
                    };
                }
            }
        }
        c
    }

    /// Baseline at width `w`; the denoiser's channel-attention reduction
    /// drops to the largest divisor of `w` not above the configured one.
    pub fn baseline_at(&self, w: usize) -> UnrolledConfig {
        let mut c = self.with_width(ModelFamily::BaselineCaunet, w);
        c.denoiser.reduction = (1..=self.reduction.max(1)).rev().find(|r| w % r == 0).unwrap_or(1);
        c
    }

    /// Resolved network configuration, width-matched when requested.
    pub fn unrolled(&self) -> AppResult<UnrolledConfig> {
        let c = match (self.model_family, self.match_params) {
            (ModelFamily::BaselineCaunet, true) => {
                let w = matched_baseline_width(self)?;
                self.baseline_at(w)
            }
            _ => self.with_width(self.model_family, self.denoiser_width),
        };
        c.validate()?;
        Ok(c)
    }
}

/// Scalar parameter count of a Stage-I configuration.
pub fn param_count(cfg: &UnrolledConfig) -> AppResult<usize> {
    Ok(promptmr_core::unrolled::UnrolledModel::new(cfg, 0)?.1.numel())
}

/// Baseline denoiser width whose total parameter count is closest to the
/// prompt model's.
pub fn matched_baseline_width(m: &ModelConfig) -> AppResult<usize> {
    let target = param_count(&m.with_width(ModelFamily::Promptmr, m.denoiser_width))? as f64;
    let mut best = (f64::INFINITY, m.denoiser_width);
    let mut w = 1;
    while w <= 4 * m.denoiser_width {
        let n = param_count(&m.baseline_at(w))? as f64;
        let gap = (n - target).abs() / target;
        if gap < best.0 {
            best = (gap, w);
        }
        if n > target {
            break;
        }
        w += 1;
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Learning-rate multiplier applied in the final epoch.
    pub final_lr_factor: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adamw,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            kind: OptimizerKind::Adamw,
            lr: a.lr,
            final_lr_factor: 0.1,
            weight_decay: a.weight_decay,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

impl OptimizerConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self, epochs: usize) -> LrSchedule {
        LrSchedule { base: self.lr, final_factor: self.final_lr_factor, epochs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Optimizer steps per epoch; 0 means one per training case.
    pub steps_per_epoch: usize,
    /// Samples whose gradients are averaged per step.
    pub grad_accum: usize,
    /// Validation reconstructs every `val_frame_stride`-th frame.
    pub val_frame_stride: usize,
    /// Cap on validation cases per task type; 0 means all.
    pub val_max_cases: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 12, steps_per_epoch: 0, grad_accum: 1, val_frame_stride: 1, val_max_cases: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub split: String,
    /// Cascade whose prompt weights are exported; defaults to the last.
    pub cascade: Option<usize>,
    pub acceleration: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { split: "test".into(), cascade: None, acceleration: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub task: TaskSet,
    pub accelerations: Vec<usize>,
    pub mask: MaskConfig,
    pub stage1: ModelConfig,
    pub stage2: RefineConfig,
    pub optimizer: OptimizerConfig,
    pub train_stage1: TrainConfig,
    pub train_stage2: TrainConfig,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    pub export: ExportConfig,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            data: DataConfig::default(),
            task: TaskSet::All,
            accelerations: vec![4, 8, 10],
            mask: MaskConfig::default(),
            stage1: ModelConfig::default(),
            stage2: RefineConfig::default(),
            optimizer: OptimizerConfig::default(),
            train_stage1: TrainConfig::default(),
            train_stage2: TrainConfig::default(),
            checkpoint_dir: PathBuf::from("runs"),
            output_dir: PathBuf::from("out"),
            export: ExportConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> AppError {
    AppError::Config(e.to_string())
}

impl ReconConfig {
    pub fn from_yaml(text: &str) -> AppResult<Self> {
        let c: Self = serde_yaml::from_str(text).map_err(config_err)?;
        Ok(c)
    }

    /// Reads `path` (or the defaults), applies overrides and the seed, and
    /// validates.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> AppResult<Self> {
        let base = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?;
                Self::from_yaml(&text)?
            }
            None => Self::default(),
        };
        let mut cfg = base.with_overrides(overrides)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `a.b.c=value` overrides; values are parsed as YAML scalars
    /// or flow collections, and every key must already exist.
    pub fn with_overrides(&self, overrides: &[String]) -> AppResult<Self> {
        let mut v = serde_yaml::to_value(self).map_err(config_err)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("override {o:?} is not key=value")))?;
            let value: serde_yaml::Value = serde_yaml::from_str(raw).map_err(config_err)?;
            let mut cur = &mut v;
            for part in key.split('.') {
                cur = cur
                    .as_mapping_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| AppError::Config(format!("unknown config key {key}")))?;
            }
            *cur = value;
        }
        serde_yaml::from_value(v).map_err(config_err)
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(AppError::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.accelerations.is_empty() || self.accelerations.contains(&0) {
            return Err(AppError::Config("accelerations must be a non-empty list of values >= 1".into()));
        }
        let [h, w] = self.data.grid;
        if self.mask.acs_lines == 0 || self.mask.acs_lines > h {
            return Err(AppError::Config(format!("acs_lines must lie in 1..={h}")));
        }
        if h < 8 || w < 8 || h % 4 != 0 || w % 4 != 0 {
            return Err(AppError::Config("grid sides must be >= 8 and divisible by 4".into()));
        }
        for t in [&self.train_stage1, &self.train_stage2] {
            if t.epochs == 0 || t.grad_accum == 0 || t.val_frame_stride == 0 {
                return Err(AppError::Config("epochs, grad_accum and val_frame_stride must be >= 1".into()));
            }
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.final_lr_factor > 0.0 && o.weight_decay >= 0.0) {
            return Err(AppError::Config("optimizer rates must be positive".into()));
        }
        if !["train", "val", "test"].contains(&self.export.split.as_str()) {
            return Err(AppError::Config(format!("unknown split {}", self.export.split)));
        }
        self.stage1.unrolled()?;
        self.stage2.validate()?;
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        self.data
            .root
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    /// Copy with the data root pinned, as written next to checkpoints.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.data.root = Some(self.data_root());
        c
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    pub fn write_frozen(&self, dir: &Path) -> AppResult<()> {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        let p = dir.join(FROZEN_CONFIG);
        fs::write(&p, self.resolved().to_yaml()).map_err(|e| AppError::io(&p, e))
    }
}
