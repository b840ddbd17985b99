//! Run configuration: one JSON document per run, overridden by flags and
//! written back fully resolved next to the outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use trialnli::ensemble::{DecisionThresholds, ModelName, TrainPreset};
use trialnli::objectives::LossConfig;
use trialnli::training::{OptimSettings, OptimizerKind};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// A model name or `all-taskA` / `all-taskB`.
    pub model: String,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    /// Named optimisation preset; defaults to the toy preset of the model.
    pub preset: Option<String>,
    pub loss: LossConfig,
    pub thresholds: DecisionThresholds,
    /// Cross-validation folds; `None` trains once on the whole split.
    pub folds: Option<usize>,
    pub seed: u64,
    pub optimizer: Option<OptimizerKind>,
    /// 512 or 1024; defaults to the model's own length.
    pub max_len: Option<usize>,
    pub output: PathBuf,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_encoder: Option<f64>,
    pub lr_other: Option<f64>,
    /// `false` drops the token-level encoder (ablation).
    pub token_level: bool,
    /// Pretrained encoder arrays (container directory) and their vocabulary.
    pub encoder_weights: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelName::M512BiBi.as_str().to_string(),
            train: None,
            dev: None,
            preset: None,
            loss: LossConfig::default(),
            thresholds: DecisionThresholds::default(),
            folds: None,
            seed: 0,
            optimizer: None,
            max_len: None,
            output: PathBuf::from("runs/latest"),
            epochs: None,
            batch_size: None,
            lr_encoder: None,
            lr_other: None,
            token_level: true,
            encoder_weights: None,
            vocab: None,
        }
    }
}

/// The resolved settings persisted with every run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub models: Vec<ModelName>,
    pub optim: Vec<(ModelName, OptimSettings)>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Models named by `model`, rejecting unknown names as usage errors.
    pub fn models(&self) -> Result<Vec<ModelName>> {
        ModelName::expand(&self.model).map_err(|e| UsageError(e.to_string()).into())
    }

    pub fn validate(&self) -> Result<()> {
        self.models()?;
        if let Some(m) = self.max_len {
            if m != 512 && m != 1024 {
                return Err(UsageError(format!("max_len must be 512 or 1024, got {m}")).into());
            }
        }
        if let Some(k) = self.folds {
            if k < 2 {
                return Err(UsageError(format!("cross-validation needs at least 2 folds, got {k}")).into());
            }
        }
        if self.encoder_weights.is_some() != self.vocab.is_some() {
            return Err(UsageError("encoder_weights and vocab must be given together".into()).into());
        }
        self.thresholds.validate().map_err(|e| UsageError(e.to_string()))?;
        self.loss.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(())
    }

    pub fn preset_for(&self, model: ModelName) -> Result<TrainPreset> {
        let name = match &self.preset {
            Some(p) => p.clone(),
            None => toy_preset(model).to_string(),
        };
        TrainPreset::named(&name).map_err(|e| UsageError(e.to_string()).into())
    }

    /// Preset values with the per-run overrides applied.
    pub fn optim_for(&self, model: ModelName) -> Result<OptimSettings> {
        let preset = self.preset_for(model)?;
        let default_opt = if model == ModelName::Generative { OptimizerKind::Adafactor } else { OptimizerKind::Adam };
        let mut s = OptimSettings::from_preset(&preset, self.optimizer.unwrap_or(default_opt), self.seed);
        if let Some(v) = self.epochs {
            s.epochs = v;
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = self.lr_encoder {
            s.lr_encoder = v;
        }
        if let Some(v) = self.lr_other {
            s.lr_other = v;
        }
        s.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(s)
    }
}

pub fn toy_preset(model: ModelName) -> &'static str {
    match model {
        ModelName::Generative => "toy-generative",
        ModelName::Pairwise => "toy-joint",
        m if m.task() == Some(trialnli::Task::B) => "toy-taskB",
        _ => "toy-taskA",
    }
}

/// Writes `value` as pretty JSON, creating parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}
