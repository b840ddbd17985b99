//! Model catalogue, training presets and checkpoint planning.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgnet::{SentenceEncoderKind, TokenEncoderKind};
use crate::objectives::Objective;
use crate::Task;

/// The inference models of the system. MGNet names read
/// `M-{max_len}-{sentence encoder}-{token encoder}[-{objective}]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelName {
    #[serde(rename = "M-512-Bi-Bi-mul")]
    M512BiBiMul,
    #[serde(rename = "M-512-Tf-Bi-cl")]
    M512TfBiCl,
    #[serde(rename = "M-1024-Tf-Bi-mul")]
    M1024TfBiMul,
    #[serde(rename = "M-512-Tf-Bi")]
    M512TfBi,
    #[serde(rename = "M-512-Bi-Bi")]
    M512BiBi,
    #[serde(rename = "M-512-Bi-Max")]
    M512BiMax,
    #[serde(rename = "generative")]
    Generative,
    #[serde(rename = "pairwise")]
    Pairwise,
}

impl ModelName {
    pub const ALL: [ModelName; 8] = [
        ModelName::M512BiBiMul,
        ModelName::M512TfBiCl,
        ModelName::M1024TfBiMul,
        ModelName::M512TfBi,
        ModelName::M512BiBi,
        ModelName::M512BiMax,
        ModelName::Generative,
        ModelName::Pairwise,
    ];

    /// Ensemble members for Task A.
    pub const TASK_A: [ModelName; 4] =
        [ModelName::M512BiBiMul, ModelName::M512TfBiCl, ModelName::M1024TfBiMul, ModelName::Generative];

    /// Ensemble members for Task B.
    pub const TASK_B: [ModelName; 3] = [ModelName::M512TfBi, ModelName::M512BiBi, ModelName::M512BiMax];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::M512BiBiMul => "M-512-Bi-Bi-mul",
            ModelName::M512TfBiCl => "M-512-Tf-Bi-cl",
            ModelName::M1024TfBiMul => "M-1024-Tf-Bi-mul",
            ModelName::M512TfBi => "M-512-Tf-Bi",
            ModelName::M512BiBi => "M-512-Bi-Bi",
            ModelName::M512BiMax => "M-512-Bi-Max",
            ModelName::Generative => "generative",
            ModelName::Pairwise => "pairwise",
        }
    }

    /// The task whose ensemble this model belongs to; `None` for the
    /// consistency network.
    pub fn task(self) -> Option<Task> {
        match self {
            ModelName::M512BiBiMul | ModelName::M512TfBiCl | ModelName::M1024TfBiMul | ModelName::Generative => {
                Some(Task::A)
            }
            ModelName::M512TfBi | ModelName::M512BiBi | ModelName::M512BiMax => Some(Task::B),
            ModelName::Pairwise => None,
        }
    }

    pub fn is_mgnet(self) -> bool {
        !matches!(self, ModelName::Generative | ModelName::Pairwise)
    }

    /// Sentence and token encoder of an MGNet model.
    pub fn architecture(self) -> Option<(SentenceEncoderKind, TokenEncoderKind)> {
        use SentenceEncoderKind as S;
        use TokenEncoderKind as T;
        match self {
            ModelName::M512BiBiMul | ModelName::M512BiBi => Some((S::Bilstm, T::Bilstm)),
            ModelName::M512TfBiCl | ModelName::M1024TfBiMul | ModelName::M512TfBi => Some((S::Transformer, T::Bilstm)),
            ModelName::M512BiMax => Some((S::Bilstm, T::Maxpool)),
            ModelName::Generative | ModelName::Pairwise => None,
        }
    }

    pub fn objective(self) -> Option<Objective> {
        match self {
            ModelName::M512BiBiMul | ModelName::M1024TfBiMul => Some(Objective::Multitask),
            ModelName::M512TfBiCl => Some(Objective::Contrastive),
            ModelName::M512TfBi | ModelName::M512BiBi | ModelName::M512BiMax => Some(Objective::Retrieval),
            ModelName::Generative | ModelName::Pairwise => None,
        }
    }

    /// Maximum input length in the full-size configuration.
    pub fn max_len(self) -> usize {
        match self {
            ModelName::M1024TfBiMul => 1024,
            _ => 512,
        }
    }

    /// Name of the full-size training preset.
    pub fn full_preset(self) -> &'static str {
        match self.task() {
            Some(Task::A) if self == ModelName::Generative => "paper-generative",
            Some(Task::A) => "paper-taskA",
            Some(Task::B) => "paper-taskB",
            None => "paper-joint",
        }
    }

    /// Expands a model name or one of the group names `all-taskA` /
    /// `all-taskB`.
    pub fn expand(name: &str) -> Result<Vec<ModelName>> {
        match name {
            "all-taskA" => Ok(ModelName::TASK_A.to_vec()),
            "all-taskB" => Ok(ModelName::TASK_B.to_vec()),
            other => Ok(vec![other.parse()?]),
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Warmup {
    Ratio(f64),
    Steps(usize),
}

impl Warmup {
    pub fn steps(self, total_steps: usize) -> usize {
        match self {
            Warmup::Ratio(r) => (r * total_steps as f64).round() as usize,
            Warmup::Steps(n) => n.min(total_steps),
        }
    }
}

/// Optimisation settings of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPreset {
    pub name: String,
    /// Learning rate of the joint encoder.
    pub lr_encoder: f64,
    /// Learning rate of everything else.
    pub lr_other: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup: Warmup,
    /// Layer count of the transformer sentence encoder.
    pub sentence_layers: usize,
}

pub const PRESET_NAMES: [&str; 8] = [
    "paper-taskA",
    "paper-taskB",
    "paper-joint",
    "paper-generative",
    "toy-taskA",
    "toy-taskB",
    "toy-joint",
    "toy-generative",
];

impl TrainPreset {
    pub fn named(name: &str) -> Result<Self> {
        let p = |lr_encoder, lr_other, batch_size, epochs, warmup, sentence_layers| TrainPreset {
            name: name.to_string(),
            lr_encoder,
            lr_other,
            batch_size,
            epochs,
            warmup,
            sentence_layers,
        };
        Ok(match name {
            "paper-taskA" => p(2e-5, 1e-4, 32, 100, Warmup::Ratio(0.3), 1),
            "paper-taskB" => p(5e-6, 5e-6, 1, 50, Warmup::Ratio(0.05), 2),
            "paper-joint" => p(2e-5, 2e-5, 32, 100, Warmup::Ratio(0.3), 1),
            "paper-generative" => p(3e-5, 3e-5, 32, 100, Warmup::Steps(500), 1),
            // Desk-scale variants: small from-scratch models need larger
            // steps and far fewer epochs.
            "toy-taskA" => p(3e-3, 6e-3, 8, 90, Warmup::Ratio(0.1), 1),
            "toy-taskB" => p(3e-3, 6e-3, 8, 60, Warmup::Ratio(0.1), 1),
            "toy-joint" => p(1e-3, 2e-3, 8, 10, Warmup::Ratio(0.1), 1),
            "toy-generative" => p(1e-2, 1e-2, 8, 6, Warmup::Steps(20), 1),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        })
    }
}

/// One checkpoint the cross-validation schedule will keep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedCheckpoint {
    pub model: ModelName,
    /// `None` for a model trained on the full training split and selected on
    /// the held-out split.
    pub fold: Option<usize>,
    /// 0 for the best checkpoint of its run, 1 for the second best.
    pub rank: usize,
}

/// Checkpoints kept per cross-validation run: one for Task A models, two for
/// Task B models.
pub fn keep_per_fold(task: Task) -> usize {
    match task {
        Task::A => 1,
        Task::B => 2,
    }
}

/// Lists every checkpoint that `k`-fold training of `models` keeps. Task B
/// models additionally keep one checkpoint from a run on the full training
/// split.
pub fn plan_checkpoints(models: &[ModelName], k: usize) -> Result<Vec<PlannedCheckpoint>> {
    let mut plan = Vec::new();
    for &model in models {
        let task = model
            .task()
            .ok_or_else(|| Error::Config(format!("{model} is not an ensemble member")))?;
        for fold in 0..k {
            for rank in 0..keep_per_fold(task) {
                plan.push(PlannedCheckpoint { model, fold: Some(fold), rank });
            }
        }
        if task == Task::B {
            plan.push(PlannedCheckpoint { model, fold: None, rank: 0 });
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in ModelName::ALL {
            assert_eq!(m.as_str().parse::<ModelName>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("M-2048".parse::<ModelName>().is_err());
    }

    #[test]
    fn full_size_plans() {
        assert_eq!(plan_checkpoints(&ModelName::TASK_A, 10).unwrap().len(), 4 * 10);
        assert_eq!(plan_checkpoints(&ModelName::TASK_B, 10).unwrap().len(), 3 * 10 * 2 + 3);
        assert_eq!(plan_checkpoints(&[ModelName::M512BiBi], 2).unwrap().len(), 5);
    }

    #[test]
    fn presets() {
        let a = TrainPreset::named("paper-taskA").unwrap();
        assert_eq!((a.lr_encoder, a.lr_other, a.batch_size, a.epochs), (2e-5, 1e-4, 32, 100));
        assert_eq!(a.warmup, Warmup::Ratio(0.3));
        let b = TrainPreset::named("paper-taskB").unwrap();
        assert_eq!((b.lr_encoder, b.sentence_layers, b.batch_size, b.epochs), (5e-6, 2, 1, 50));
        let g = TrainPreset::named("paper-generative").unwrap();
        assert_eq!(g.warmup.steps(10_000), 500);
        for n in PRESET_NAMES {
            TrainPreset::named(n).unwrap();
        }
        assert!(TrainPreset::named("paper-x").is_err());
    }
}
