//! MGNet fine-tuning and inference over datasets.
//!
//! Task A examples use the joint premise (both trials behind markers for
//! comparisons); Task B examples pair the hypothesis with each referenced
//! trial separately.

use std::path::Path;

use autodiff::{GradStore, Matrix, ParamStore, Tape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{batch_gradients, epoch_order, mix_seed, OptimSettings, Stepper, ENC};
use crate::corpus::{build_premise, encode_pair, Dataset, Instance, TokenSequence, Tokenizer, TrialSide, PRIMARY_MARKER, SECONDARY_MARKER};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::ensemble::{DecisionThresholds, EvidenceScores, ModelName, PredictionFile, PredictionMeta, PredictionSet, TrainPreset};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_predictions;
use crate::mgnet::{mgnet_on_tape, MGNetConfig, MGNetParams, MGNetVars};
use crate::nn::{Dropout, Scope};
use crate::objectives::{entailment_loss_on_tape, retrieval_loss_on_tape, scl_on_tape, LossConfig, Objective};
use crate::Task;

/// Prefix of MGNet arrays inside the merged store.
pub const MG: &str = "mg.";

/// Collects every text a tokenizer for `datasets` must cover.
pub fn corpus_texts(datasets: &[&Dataset]) -> Vec<String> {
    let mut out = vec![PRIMARY_MARKER.to_string(), SECONDARY_MARKER.to_string()];
    for ds in datasets {
        out.extend(ds.instances.iter().map(|i| i.hypothesis.clone()));
        for t in ds.trials.values() {
            out.extend(t.sections.values().flatten().cloned());
        }
    }
    out
}

/// One encoded training or inference unit.
#[derive(Clone, Debug)]
pub struct Example {
    pub uuid: String,
    pub side: TrialSide,
    pub seq: TokenSequence,
    pub markers: Vec<bool>,
    /// Entailment target, when labelled.
    pub y: Option<u8>,
    /// Evidence target per premise sentence, when labelled.
    pub r: Option<Vec<u8>>,
    /// Original section index of every premise sentence (`None` for markers).
    pub origin: Vec<Option<usize>>,
}

/// Encodes `inst` for `task`: one example for Task A, one per referenced
/// trial for Task B.
pub fn prepare_examples(inst: &Instance, ds: &Dataset, task: Task, tok: &Tokenizer, max_len: usize) -> Result<Vec<Example>> {
    let built = build_premise(inst, &ds.trials, task)?;
    let mut out = Vec::new();
    for (side, view) in built.views() {
        let seq = encode_pair(&inst.hypothesis, view, tok, max_len)?;
        let markers = view.origins.iter().map(|o| o.is_marker()).collect();
        let r = inst.primary_evidence.as_ref().map(|_| view.evidence_labels(inst));
        out.push(Example {
            uuid: inst.uuid.clone(),
            side,
            seq,
            markers,
            y: inst.label.map(|l| l.as_target()),
            r,
            origin: view.origins.iter().map(|o| o.original_index).collect(),
        });
    }
    Ok(out)
}

pub fn prepare_dataset(ds: &Dataset, task: Task, tok: &Tokenizer, max_len: usize) -> Result<Vec<Example>> {
    let parts: Vec<Result<Vec<Example>>> =
        ds.instances.par_iter().map(|inst| prepare_examples(inst, ds, task, tok, max_len)).collect();
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSetup {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<ModelName>,
    pub task: Task,
    pub objective: Objective,
    pub max_len: usize,
    pub loss: LossConfig,
}

/// Desk-scale configuration of a named model: the small from-scratch
/// encoder plus the sentence encoder, token encoder and objective the name
/// selects. The sentence-transformer depth comes from `preset`.
pub fn toy_architecture(
    name: ModelName,
    preset: &TrainPreset,
    loss: LossConfig,
    vocab_size: usize,
) -> Result<(ModelSetup, EncoderConfig, MGNetConfig)> {
    let (Some((sentence, token)), Some(objective), Some(task)) = (name.architecture(), name.objective(), name.task()) else {
        return Err(Error::Config(format!("{name} is not an MGNet model")));
    };
    let max_len = name.max_len();
    let encoder = EncoderConfig::toy(vocab_size, max_len);
    let mut mgnet = MGNetConfig::new(sentence, token, encoder.d);
    mgnet.sentence_layers = preset.sentence_layers;
    mgnet.sentence_heads = encoder.heads;
    let setup = ModelSetup { name: Some(name), task, objective, max_len, loss };
    Ok((setup, encoder, mgnet))
}

/// Encoder plus MGNet head with a tokenizer.
#[derive(Clone, Debug)]
pub struct MGNetModel {
    pub setup: ModelSetup,
    pub encoder: EncoderConfig,
    pub mgnet: MGNetConfig,
    /// Encoder arrays under `enc.`, MGNet arrays under `mg.`.
    pub store: ParamStore,
    pub tokenizer: Tokenizer,
}

/// A parameter snapshot kept during training.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    /// Dev f1 of the model's task, or `None` without a dev split.
    pub metric: Option<f64>,
    pub store: ParamStore,
}

#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub epoch_loss: Vec<f64>,
    pub dev_f1: Vec<f64>,
    /// Best first.
    pub snapshots: Vec<Snapshot>,
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub settings: OptimSettings,
    /// Snapshots to keep (best dev f1 first).
    pub keep: usize,
    pub thresholds: DecisionThresholds,
}

impl MGNetModel {
    pub fn init(setup: ModelSetup, encoder: EncoderConfig, mgnet: MGNetConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        if encoder.vocab_size != tokenizer.vocab_size() {
            return Err(Error::Config(format!(
                "encoder vocabulary {} differs from tokenizer vocabulary {}",
                encoder.vocab_size,
                tokenizer.vocab_size()
            )));
        }
        if setup.max_len > encoder.max_positions {
            return Err(Error::Config(format!("max_len {} exceeds {} positions", setup.max_len, encoder.max_positions)));
        }
        setup.loss.validate()?;
        let enc = EncoderParams::init(encoder.clone(), seed)?;
        let mg = MGNetParams::init(mgnet.clone(), mix_seed(seed, 1, 0))?;
        let mut store = ParamStore::new();
        store.absorb(ENC, enc.store);
        store.absorb(MG, mg.store);
        Ok(Self { setup, encoder, mgnet, store, tokenizer })
    }

    pub fn encoder_params(&self) -> Result<EncoderParams> {
        let p = EncoderParams { config: self.encoder.clone(), store: self.store.extract(ENC) };
        p.validate()?;
        Ok(p)
    }

    pub fn mgnet_params(&self) -> Result<MGNetParams> {
        let p = MGNetParams { config: self.mgnet.clone(), store: self.store.extract(MG) };
        p.validate()?;
        Ok(p)
    }

    fn forward(&self, store: &ParamStore, tape: &mut Tape, ex: &Example, evidence: bool, dropout: &mut Dropout) -> Result<MGNetVars> {
        mgnet_on_tape(
            tape,
            Scope::new(store, ENC),
            &self.encoder,
            Scope::new(store, MG),
            &self.mgnet,
            &ex.seq,
            &ex.markers,
            evidence,
            dropout,
        )
    }

    fn needs_evidence(&self) -> bool {
        matches!(self.setup.objective, Objective::Retrieval | Objective::Multitask)
    }

    /// Loss of one example under a per-example objective. Examples without
    /// the needed labels (or without scored sentences) contribute nothing.
    fn example_loss(&self, store: &ParamStore, ex: &Example, seed: u64) -> Result<(f64, Vec<(String, Matrix)>)> {
        let mut tape = Tape::new();
        let mut dropout = Dropout::train(self.encoder.dropout, seed);
        let vars = self.forward(store, &mut tape, ex, self.needs_evidence(), &mut dropout)?;
        let l_a = ex.y.map(|y| entailment_loss_on_tape(&mut tape, vars.p_a, &[y]));
        let l_b = match (&ex.r, vars.p_b) {
            (Some(r), Some(p_b)) => {
                let r: Vec<u8> = vars.scored.iter().map(|&i| r[i]).collect();
                Some(retrieval_loss_on_tape(&mut tape, p_b, &r))
            }
            _ => None,
        };
        let loss = match self.setup.objective {
            Objective::Entailment | Objective::Contrastive => l_a,
            Objective::Retrieval => l_b,
            Objective::Multitask => match (l_a, l_b) {
                (Some(a), Some(b)) => Some(crate::objectives::multitask_on_tape(&mut tape, a, b, &self.setup.loss)),
                (a, None) => a,
                (None, b) => b,
            },
        };
        let Some(loss) = loss else { return Ok((0.0, Vec::new())) };
        let g = tape.backward(loss);
        Ok((tape.scalar(loss), tape.param_grads(&g)))
    }

    /// Contrastive batch: `γ mean CE + (1 - γ) SCL` over the batch globals.
    ///
    /// Globals are computed first; the SCL gradient with respect to them is
    /// then pushed through each example's own graph as the linear term
    /// `Σ g_i · ∂SCL/∂g_i`, which yields the exact batch gradient.
    fn contrastive_batch(&self, store: &ParamStore, batch: &[&Example], seed: u64) -> Result<(f64, GradStore)> {
        let labelled: Vec<&Example> = batch.iter().copied().filter(|e| e.y.is_some()).collect();
        let n = labelled.len();
        if n == 0 {
            return Ok((0.0, GradStore::new()));
        }
        let cfg = self.setup.loss;
        let seeds: Vec<u64> = (0..n).map(|i| mix_seed(seed, i as u64, 1)).collect();
        let globals: Vec<Result<Matrix>> = labelled
            .par_iter()
            .zip(&seeds)
            .map(|(ex, &s)| {
                let mut tape = Tape::new();
                let vars = self.forward(store, &mut tape, ex, false, &mut Dropout::train(self.encoder.dropout, s))?;
                Ok(tape.value(vars.global).clone())
            })
            .collect();
        let rows: Vec<Matrix> = globals.into_iter().collect::<Result<_>>()?;
        let d = rows[0].ncols();
        let g_all = Matrix::from_shape_fn((n, d), |(i, j)| rows[i][[0, j]]);
        let y: Vec<u8> = labelled.iter().map(|e| e.y.expect("labelled")).collect();
        let mut small = Tape::new();
        let gv = small.constant(g_all);
        let (scl, dg) = match scl_on_tape(&mut small, gv, &y, cfg.tau) {
            Some(s) if n >= 2 => {
                let grads = small.backward(s);
                (small.scalar(s), grads.get(gv).cloned().unwrap_or_else(|| Matrix::zeros((n, d))))
            }
            _ => (0.0, Matrix::zeros((n, d))),
        };
        let parts: Vec<Result<(f64, Vec<(String, Matrix)>)>> = labelled
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut tape = Tape::new();
                let vars = self.forward(store, &mut tape, ex, false, &mut Dropout::train(self.encoder.dropout, seeds[i]))?;
                let ce = entailment_loss_on_tape(&mut tape, vars.p_a, &[y[i]]);
                let ce_value = tape.scalar(ce);
                let ce = tape.scale(ce, cfg.gamma / n as f64);
                let coeff = dg.slice(ndarray::s![i..i + 1, ..]).mapv(|v| v * (1.0 - cfg.gamma));
                let lin = tape.mul_const(vars.global, coeff);
                let lin = tape.sum(lin);
                let total = tape.add(ce, lin);
                let g = tape.backward(total);
                Ok((ce_value, tape.param_grads(&g)))
            })
            .collect();
        let mut grads = GradStore::new();
        let mut ce_sum = 0.0;
        for p in parts {
            let (ce, g) = p?;
            ce_sum += ce;
            for (name, m) in &g {
                grads.accumulate(name, m);
            }
        }
        let loss = cfg.gamma * ce_sum / n as f64 + (1.0 - cfg.gamma) * scl;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite contrastive loss {loss}")));
        }
        Ok((loss, grads))
    }

    /// Mean loss and gradient of one batch under the model's objective.
    pub fn batch_loss(&self, store: &ParamStore, batch: &[&Example], seed: u64) -> Result<(f64, GradStore)> {
        if self.setup.objective == Objective::Contrastive {
            self.contrastive_batch(store, batch, seed)
        } else {
            batch_gradients(store, batch, seed, |s, ex, sd| self.example_loss(s, ex, sd))
        }
    }

    /// Trains on `train`, evaluating on `dev` after every epoch and keeping
    /// the best `keep` snapshots. Without a dev split the final parameters
    /// are the only snapshot. On return `self.store` holds the best snapshot.
    pub fn fit(&mut self, train: &Dataset, dev: Option<&Dataset>, opts: &FitOptions) -> Result<FitReport> {
        let s = &opts.settings;
        s.validate()?;
        let examples = prepare_dataset(train, self.setup.task, &self.tokenizer, self.setup.max_len)?;
        if examples.is_empty() {
            return Err(Error::Degenerate("no training examples".into()));
        }
        let per_epoch = s.steps_per_epoch(examples.len());
        let mut stepper = Stepper::new(s, per_epoch * s.epochs);
        let mut report = FitReport::default();
        for epoch in 0..s.epochs {
            let order = epoch_order(examples.len(), s.seed, epoch);
            let mut total = 0.0;
            for (b, chunk) in order.chunks(s.batch_size).enumerate() {
                let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
                let (loss, mut grads) = self.batch_loss(&self.store, &batch, mix_seed(s.seed, epoch as u64, b as u64 + 1))?;
                if grads.is_empty() {
                    continue;
                }
                stepper.apply(&mut self.store, &mut grads)?;
                total += loss * batch.len() as f64;
            }
            let mean = total / examples.len() as f64;
            report.epoch_loss.push(mean);
            let metric = match dev {
                Some(dev) => {
                    let f1 = self.dev_f1(dev, opts.thresholds)?;
                    report.dev_f1.push(f1);
                    Some(f1)
                }
                None => None,
            };
            log::info!("epoch {epoch}: loss {mean:.4}, dev f1 {}", metric.map_or("-".into(), |m| format!("{m:.4}")));
            if metric.is_some() {
                keep_best(&mut report.snapshots, Snapshot { epoch, metric, store: self.store.clone() }, opts.keep.max(1));
            }
        }
        if report.snapshots.is_empty() {
            report.snapshots.push(Snapshot { epoch: s.epochs - 1, metric: None, store: self.store.clone() });
        }
        self.store = report.snapshots[0].store.clone();
        Ok(report)
    }

    /// F1 of the model's own task on a labelled split.
    pub fn dev_f1(&self, dev: &Dataset, thresholds: DecisionThresholds) -> Result<f64> {
        let set = self.predict(dev)?;
        let meta = PredictionMeta { checkpoints: Vec::new(), thresholds, joint: false };
        let report = evaluate_predictions(&PredictionFile::decide(&set, meta), dev)?;
        let r = match self.setup.task {
            Task::A => report.task_a,
            Task::B => report.task_b,
        };
        Ok(r.map_or(0.0, |r| r.f1))
    }

    /// Eval-mode outputs for every instance of `ds`: entailment
    /// probabilities for a Task A model, evidence scores for a Task B model.
    /// Markers and truncated sentences score 0.
    pub fn predict(&self, ds: &Dataset) -> Result<PredictionSet> {
        let task = self.setup.task;
        let outputs: Vec<Result<(String, Option<[f64; 2]>, Option<EvidenceScores>)>> = ds
            .instances
            .par_iter()
            .map(|inst| {
                let examples = prepare_examples(inst, ds, task, &self.tokenizer, self.setup.max_len)?;
                let mut p_a = None;
                let mut ev = EvidenceScores::default();
                for ex in &examples {
                    let mut tape = Tape::new();
                    let vars = self.forward(&self.store, &mut tape, ex, task == Task::B, &mut Dropout::eval())?;
                    if task == Task::A {
                        let v = tape.value(vars.p_a);
                        p_a = Some([v[[0, 0]], v[[0, 1]]]);
                        continue;
                    }
                    let m = ex.origin.iter().flatten().count();
                    let mut scores = vec![0.0; m];
                    if let Some(p_b) = vars.p_b {
                        let v = tape.value(p_b);
                        for (k, &i) in vars.scored.iter().enumerate() {
                            if let Some(orig) = ex.origin[i] {
                                scores[orig] = v[[k, 0]];
                            }
                        }
                    }
                    match ex.side {
                        TrialSide::Primary => ev.primary = scores,
                        TrialSide::Secondary => ev.secondary = Some(scores),
                    }
                }
                Ok((inst.uuid.clone(), p_a, (task == Task::B).then_some(ev)))
            })
            .collect();
        let mut set = PredictionSet { contributors: 1, ..Default::default() };
        for o in outputs {
            let (uuid, p_a, ev) = o?;
            if let Some(p) = p_a {
                set.task_a.insert(uuid.clone(), p);
            }
            if let Some(e) = ev {
                set.task_b.insert(uuid, e);
            }
        }
        Ok(set)
    }

    /// Writes `config.json`, `encoder/`, `mgnet/` and `vocab.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join("config.json");
        std::fs::write(&cfg, serde_json::to_string_pretty(&self.setup)?).map_err(|e| Error::io(&cfg, e))?;
        self.encoder_params()?.export(&dir.join("encoder"))?;
        self.mgnet_params()?.save(&dir.join("mgnet"))?;
        self.tokenizer.save(&dir.join("vocab.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = dir.join("config.json");
        let text = std::fs::read_to_string(&cfg).map_err(|e| Error::io(&cfg, e))?;
        let setup: ModelSetup = serde_json::from_str(&text)?;
        let enc = crate::encoder::import_parameters(&dir.join("encoder"))?;
        let mg = MGNetParams::load(&dir.join("mgnet"))?;
        let tokenizer = Tokenizer::load(&dir.join("vocab.json"))?;
        if enc.config.vocab_size != tokenizer.vocab_size() {
            return Err(Error::Config(format!("checkpoint {} has mismatched vocabulary", dir.display())));
        }
        let mut store = ParamStore::new();
        store.absorb(ENC, enc.store);
        store.absorb(MG, mg.store);
        Ok(Self { setup, encoder: enc.config, mgnet: mg.config, store, tokenizer })
    }
}

/// Inserts `snap` into the best-first list, keeping at most `keep`. Ties
/// keep the earlier epoch ahead.
fn keep_best(list: &mut Vec<Snapshot>, snap: Snapshot, keep: usize) {
    let m = snap.metric.unwrap_or(f64::NEG_INFINITY);
    let pos = list.iter().position(|s| s.metric.unwrap_or(f64::NEG_INFINITY) < m).unwrap_or(list.len());
    list.insert(pos, snap);
    list.truncate(keep);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_best_orders_and_truncates() {
        let mut list = Vec::new();
        for (e, m) in [(0, 0.5), (1, 0.7), (2, 0.6), (3, 0.7)] {
            keep_best(&mut list, Snapshot { epoch: e, metric: Some(m), store: ParamStore::new() }, 2);
        }
        let epochs: Vec<usize> = list.iter().map(|s| s.epoch).collect();
        assert_eq!(epochs, vec![1, 3]);
    }
}
