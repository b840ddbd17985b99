use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{keep_per_fold, soft_ensemble, DecisionThresholds, ModelName, PredictionFile, PredictionMeta, PredictionSet};
use crate::corpus::{Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_predictions;
use crate::generative::{score_dataset, CharSeq2Seq};
use crate::training::mgnet::{FitOptions, MGNetModel};
use crate::training::{mix_seed, OptimSettings};
use crate::Task;

/// One saved checkpoint and how it was selected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: String,
    /// `None` for the run on the full training split.
    pub fold: Option<usize>,
    /// 0 for the best epoch of its run, 1 for the runner-up.
    pub rank: usize,
    pub epoch: usize,
    /// Dev f1 that selected the checkpoint.
    pub metric: f64,
    pub path: PathBuf,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: Option<usize>,
    pub reason: String,
}

/// Per-epoch training loss and dev f1 of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCurve {
    pub fold: Option<usize>,
    pub epoch_loss: Vec<f64>,
    pub dev_f1: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub checkpoints: Vec<CheckpointMeta>,
    pub failures: Vec<FoldFailure>,
    #[serde(default)]
    pub curves: Vec<RunCurve>,
}

impl CvReport {
    pub fn merge(&mut self, other: CvReport) {
        self.checkpoints.extend(other.checkpoints);
        self.failures.extend(other.failures);
        self.curves.extend(other.curves);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn model_label(template: &MGNetModel) -> String {
    template.setup.name.map_or_else(|| "mgnet".to_string(), |n| n.as_str().to_string())
}

/// Trains a fresh copy of `template` on `train`, selects on `dev` and saves
/// the kept snapshots under `dir`. Divergence is returned as `Ok(Err(..))`
/// so the caller can record it and carry on.
fn run_one(
    template: &MGNetModel,
    train: &Dataset,
    dev: &Dataset,
    opts: &FitOptions,
    fold: Option<usize>,
    keep: usize,
    dir: &Path,
) -> Result<std::result::Result<(Vec<CheckpointMeta>, RunCurve), FoldFailure>> {
    let salt = fold.map_or(u64::MAX, |f| f as u64);
    let seed = mix_seed(opts.settings.seed, salt, 17);
    let mut model = MGNetModel::init(
        template.setup.clone(),
        template.encoder.clone(),
        template.mgnet.clone(),
        template.tokenizer.clone(),
        seed,
    )?;
    let mut fold_opts = opts.clone();
    fold_opts.keep = keep;
    fold_opts.settings.seed = seed;
    let report = match model.fit(train, Some(dev), &fold_opts) {
        Ok(r) => r,
        Err(Error::Diverged(reason)) => {
            log::warn!("run {fold:?} diverged: {reason}");
            return Ok(Err(FoldFailure { fold, reason }));
        }
        Err(e) => return Err(e),
    };
    let curve = RunCurve { fold, epoch_loss: report.epoch_loss.clone(), dev_f1: report.dev_f1.clone() };
    let name = model_label(template);
    let mut metas = Vec::with_capacity(keep);
    for (rank, snap) in report.snapshots.into_iter().enumerate() {
        let tag = fold.map_or_else(|| "full".to_string(), |f| format!("fold{f}"));
        let path = dir.join(format!("{name}-{tag}-r{rank}"));
        model.store = snap.store;
        model.save(&path)?;
        metas.push(CheckpointMeta {
            model: name.clone(),
            fold,
            rank,
            epoch: snap.epoch,
            metric: snap.metric.unwrap_or(0.0),
            path,
            task: template.setup.task,
        });
    }
    Ok(Ok((metas, curve)))
}

/// k-fold training: per fold, train on the other folds, pick epochs by f1
/// on the held-out fold and keep one (Task A) or two (Task B) checkpoints.
/// Folds are independent and run in parallel; every fold has its own seed,
/// so results match a sequential run.
pub fn train_cv(template: &MGNetModel, dataset: &Dataset, folds: &FoldPlan, opts: &FitOptions, dir: &Path) -> Result<CvReport> {
    for inst in &dataset.instances {
        if folds.fold_of(&inst.uuid).is_none() {
            return Err(Error::Alignment { key: inst.uuid.clone() });
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let keep = keep_per_fold(template.setup.task);
    let runs: Vec<_> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let train = dataset.subset(|i| folds.fold_of(&i.uuid) != Some(f));
            let dev = dataset.subset(|i| folds.fold_of(&i.uuid) == Some(f));
            run_one(template, &train, &dev, opts, Some(f), keep, dir)
        })
        .collect::<Result<_>>()?;
    let mut report = CvReport::default();
    for run in runs {
        match run {
            Ok((metas, curve)) => {
                report.checkpoints.extend(metas);
                report.curves.push(curve);
            }
            Err(failure) => report.failures.push(failure),
        }
    }
    Ok(report)
}

/// One extra checkpoint trained on all of `train` and selected on `heldout`
/// (the Task B schedule adds one per model).
pub fn train_full(template: &MGNetModel, train: &Dataset, heldout: &Dataset, opts: &FitOptions, dir: &Path) -> Result<CvReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut report = CvReport::default();
    match run_one(template, train, heldout, opts, None, 1, dir)? {
        Ok((metas, curve)) => {
            report.checkpoints = metas;
            report.curves.push(curve);
        }
        Err(failure) => report.failures.push(failure),
    }
    Ok(report)
}

/// k-fold training of the sequence scorer; one checkpoint per fold,
/// recorded with its f1 on the held-out fold.
pub fn train_scorer_cv(
    template: &CharSeq2Seq,
    dataset: &Dataset,
    folds: &FoldPlan,
    settings: &OptimSettings,
    thresholds: DecisionThresholds,
    dir: &Path,
) -> Result<CvReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = ModelName::Generative.as_str();
    let runs: Vec<(CheckpointMeta, RunCurve)> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let train = dataset.subset(|i| folds.fold_of(&i.uuid) != Some(f));
            let dev = dataset.subset(|i| folds.fold_of(&i.uuid) == Some(f));
            let seed = mix_seed(settings.seed, f as u64, 17);
            let mut model = CharSeq2Seq::init(template.config.clone(), template.vocab.clone(), seed)?;
            let mut s = settings.clone();
            s.seed = seed;
            let report = model.train(&train, &s)?;
            let set = score_dataset(&model, &dev)?;
            let meta = PredictionMeta { checkpoints: Vec::new(), thresholds, joint: false };
            let f1 = evaluate_predictions(&PredictionFile::decide(&set, meta), &dev)?.task_a.map_or(0.0, |r| r.f1);
            let path = dir.join(format!("{name}-fold{f}-r0"));
            model.save(&path)?;
            let meta = CheckpointMeta {
                model: name.to_string(),
                fold: Some(f),
                rank: 0,
                epoch: s.epochs - 1,
                metric: f1,
                path,
                task: Task::A,
            };
            Ok((meta, RunCurve { fold: Some(f), epoch_loss: report.epoch_loss, dev_f1: vec![f1] }))
        })
        .collect::<Result<_>>()?;
    let mut report = CvReport::default();
    for (meta, curve) in runs {
        report.checkpoints.push(meta);
        report.curves.push(curve);
    }
    Ok(report)
}

/// Predictions of one saved checkpoint, loaded according to its model name.
pub fn checkpoint_predict(checkpoint: &CheckpointMeta, dataset: &Dataset) -> Result<PredictionSet> {
    if checkpoint.model == ModelName::Generative.as_str() {
        score_dataset(&CharSeq2Seq::load(&checkpoint.path)?, dataset)
    } else {
        MGNetModel::load(&checkpoint.path)?.predict(dataset)
    }
}

/// Loads every checkpoint, predicts `dataset` and averages the predictions.
/// Task A and Task B checkpoints are averaged separately and merged.
pub fn ensemble_predict(checkpoints: &[CheckpointMeta], dataset: &Dataset) -> Result<PredictionSet> {
    if checkpoints.is_empty() {
        return Err(Error::Argument("no checkpoints to ensemble".into()));
    }
    let mut merged = PredictionSet { contributors: 0, ..Default::default() };
    for task in [Task::A, Task::B] {
        let sets: Vec<PredictionSet> = checkpoints
            .iter()
            .filter(|c| c.task == task)
            .map(|c| checkpoint_predict(c, dataset))
            .collect::<Result<_>>()?;
        if sets.is_empty() {
            continue;
        }
        let avg = soft_ensemble(&sets)?;
        merged.task_a.extend(avg.task_a);
        merged.task_b.extend(avg.task_b);
        merged.contributors += avg.contributors;
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split_folds, SyntheticConfig, Tokenizer};
    use crate::encoder::EncoderConfig;
    use crate::ensemble::{DecisionThresholds, Warmup};
    use crate::mgnet::{MGNetConfig, SentenceEncoderKind, TokenEncoderKind};
    use crate::objectives::{LossConfig, Objective};
    use crate::training::mgnet::{corpus_texts, ModelSetup};
    use crate::training::{OptimSettings, OptimizerKind};

    fn template(task: Task, ds: &Dataset) -> MGNetModel {
        let texts = corpus_texts(&[ds]);
        let tok = Tokenizer::build(texts.iter().map(String::as_str), 1);
        let mut enc = EncoderConfig::toy(tok.vocab_size(), 256);
        enc.d = 8;
        enc.ff = 16;
        enc.layers = 1;
        let mg = MGNetConfig::new(SentenceEncoderKind::Bilstm, TokenEncoderKind::Maxpool, 8);
        let objective = if task == Task::A { Objective::Entailment } else { Objective::Retrieval };
        let setup = ModelSetup { name: None, task, objective, max_len: 256, loss: LossConfig::default() };
        MGNetModel::init(setup, enc, mg, tok, 0).unwrap()
    }

    fn opts() -> FitOptions {
        FitOptions {
            settings: OptimSettings {
                optimizer: OptimizerKind::Adam,
                lr_encoder: 1e-3,
                lr_other: 1e-3,
                batch_size: 4,
                epochs: 2,
                warmup: Warmup::Steps(0),
                clip_norm: 1.0,
                seed: 5,
            },
            keep: 1,
            thresholds: DecisionThresholds::default(),
        }
    }

    #[test]
    fn two_folds_give_checkpoints_with_metrics() {
        let ds = generate_synthetic(9, 12, &SyntheticConfig::default()).unwrap();
        let folds = split_folds(&ds.instances, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let rep = train_cv(&template(Task::A, &ds), &ds, &folds, &opts(), dir.path()).unwrap();
        assert_eq!(rep.checkpoints.len(), 2);
        assert!(rep.failures.is_empty());
        for c in &rep.checkpoints {
            assert!((0.0..=1.0).contains(&c.metric));
            assert!(c.path.join("config.json").exists());
        }
        let set = ensemble_predict(&rep.checkpoints, &ds).unwrap();
        assert_eq!(set.contributors, 2);
        assert_eq!(set.task_a.len(), ds.instances.len());
    }

    #[test]
    fn task_b_keeps_two_per_fold_and_is_deterministic() {
        let ds = generate_synthetic(9, 12, &SyntheticConfig::default()).unwrap();
        let folds = split_folds(&ds.instances, 2, 1).unwrap();
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let t = template(Task::B, &ds);
        let a = train_cv(&t, &ds, &folds, &opts(), d1.path()).unwrap();
        let b = train_cv(&t, &ds, &folds, &opts(), d2.path()).unwrap();
        assert_eq!(a.checkpoints.len(), 4);
        for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
            assert_eq!((x.fold, x.rank, x.epoch, x.metric), (y.fold, y.rank, y.epoch, y.metric));
            assert_eq!(MGNetModel::load(&x.path).unwrap().store, MGNetModel::load(&y.path).unwrap().store);
        }
    }
}
