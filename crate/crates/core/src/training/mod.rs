//! Mini-batch optimisation shared by every trainable model, plus the MGNet
//! fine-tuning loop.

pub mod mgnet;

use autodiff::optim::{Adafactor, Adam, LearningRates, LinearSchedule, Optimizer};
use autodiff::{GradStore, Matrix, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{TrainPreset, Warmup};
use crate::error::{Error, Result};

/// Prefix of encoder arrays inside a merged parameter store.
pub const ENC: &str = "enc.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adafactor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimSettings {
    pub optimizer: OptimizerKind,
    /// Learning rate of arrays under [`ENC`].
    pub lr_encoder: f64,
    /// Learning rate of everything else.
    pub lr_other: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup: Warmup,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl OptimSettings {
    pub fn from_preset(preset: &TrainPreset, optimizer: OptimizerKind, seed: u64) -> Self {
        Self {
            optimizer,
            lr_encoder: preset.lr_encoder,
            lr_other: preset.lr_other,
            batch_size: preset.batch_size,
            epochs: preset.epochs,
            warmup: preset.warmup,
            clip_norm: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.lr_encoder > 0.0 && self.lr_other > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size)
    }
}

/// Optimiser plus linear warmup/decay schedule.
pub struct Stepper {
    opt: Box<dyn Optimizer + Send>,
    schedule: LinearSchedule,
    step: usize,
    clip_norm: f64,
}

impl Stepper {
    pub fn new(settings: &OptimSettings, total_steps: usize) -> Self {
        let lr = LearningRates::uniform(settings.lr_other).with_prefix(ENC, settings.lr_encoder);
        let opt: Box<dyn Optimizer + Send> = match settings.optimizer {
            OptimizerKind::Adam => Box::new(Adam::new(lr)),
            OptimizerKind::Adafactor => Box::new(Adafactor::new(lr)),
        };
        let warmup = settings.warmup.steps(total_steps);
        Self { opt, schedule: LinearSchedule::new(warmup, total_steps), step: 0, clip_norm: settings.clip_norm }
    }

    /// Applies one update; a non-finite gradient is reported as divergence.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &mut GradStore) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Diverged(format!("non-finite gradient at step {}", self.step)));
        }
        if self.clip_norm > 0.0 {
            grads.clip_norm(self.clip_norm);
        }
        let factor = self.schedule.factor(self.step);
        self.opt.step(store, grads, factor);
        self.step += 1;
        if !store.all_finite() {
            return Err(Error::Diverged(format!("non-finite parameters after step {}", self.step)));
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}

/// Deterministic 64-bit mixing of a base seed with counters.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Example order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64, 0)));
    order
}

/// Mean loss and mean gradient over a batch of independent examples.
///
/// `f(store, example, seed)` returns the example's loss and parameter
/// gradients. Examples run in parallel; the reduction happens in batch order
/// so the result does not depend on the thread count.
pub fn batch_gradients<E, F>(store: &ParamStore, batch: &[&E], seed: u64, f: F) -> Result<(f64, GradStore)>
where
    E: Sync,
    F: Fn(&ParamStore, &E, u64) -> Result<(f64, Vec<(String, Matrix)>)> + Sync,
{
    let parts: Vec<Result<(f64, Vec<(String, Matrix)>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, e)| f(store, e, mix_seed(seed, i as u64, 1)))
        .collect();
    let mut grads = GradStore::new();
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        if !l.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss {l}")));
        }
        loss += l;
        for (name, m) in &g {
            grads.accumulate(name, m);
        }
    }
    let n = batch.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}
