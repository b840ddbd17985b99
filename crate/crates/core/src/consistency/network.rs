//! Pair network: the shared encoder over `[CLS] S_i [SEP] S_j [SEP] P [SEP]`,
//! then a two-layer tanh MLP on the `[CLS]` row and a softmax over
//! (same label, different label).

use std::path::Path;

use autodiff::{Matrix, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pairgen::{PairDataset, PairExample};
use super::PairJudge;
use crate::container::{load_container, save_container};
use crate::corpus::{encode_segments, PremiseView, TokenSequence, Tokenizer};
use crate::encoder::{encode_on_tape, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::evaluation::ConfusionCounts;
use crate::nn::{self, Dropout, Scope};
use crate::objectives::EPS;
use crate::training::{batch_gradients, epoch_order, OptimSettings, Stepper, ENC};

const HEAD: &str = "head.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub encoder: EncoderConfig,
    /// Token budget of a pair sequence.
    pub max_len: usize,
}

/// Trained (or freshly initialised) pair network with its tokenizer.
#[derive(Clone, Debug)]
pub struct ConsistencyModel {
    pub config: ConsistencyConfig,
    /// Encoder arrays under `enc.`, MLP arrays under `head.`.
    pub store: ParamStore,
    pub tokenizer: Tokenizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTrainReport {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Accuracy on the training pairs after the last epoch.
    pub train_accuracy: f64,
}

impl ConsistencyModel {
    pub fn init(config: ConsistencyConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        if config.encoder.vocab_size != tokenizer.vocab_size() {
            return Err(Error::Config(format!(
                "encoder vocabulary {} differs from tokenizer vocabulary {}",
                config.encoder.vocab_size,
                tokenizer.vocab_size()
            )));
        }
        if config.max_len > config.encoder.max_positions {
            return Err(Error::Config(format!(
                "pair budget {} exceeds {} encoder positions",
                config.max_len, config.encoder.max_positions
            )));
        }
        let enc = EncoderParams::init(config.encoder.clone(), seed)?;
        let mut store = ParamStore::new();
        store.absorb(ENC, enc.store);
        let d = config.encoder.d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        nn::init_linear(&mut store, &mut rng, "head.1", d, d, config.encoder.init_std);
        nn::init_linear(&mut store, &mut rng, "head.2", d, 2, config.encoder.init_std);
        Ok(Self { config, store, tokenizer })
    }

    pub fn encode(&self, first: &str, second: &str, premise: &PremiseView) -> Result<TokenSequence> {
        if first.trim().is_empty() || second.trim().is_empty() {
            return Err(Error::Argument("pair hypotheses must be non-empty".into()));
        }
        encode_segments(&[first, second], premise, &self.tokenizer, self.config.max_len)
    }

    fn forward(&self, store: &ParamStore, tape: &mut Tape, seq: &TokenSequence, dropout: &mut Dropout) -> Result<Var> {
        let h = encode_on_tape(tape, Scope::new(store, ENC), &self.config.encoder, seq, dropout)?;
        let cls = tape.slice_rows(h, 0, 1);
        let cls = dropout.apply(tape, cls);
        let head = Scope::new(store, HEAD);
        let z = nn::linear(tape, head, "1", cls);
        let z = tape.tanh(z);
        let z = dropout.apply(tape, z);
        let logits = nn::linear(tape, head, "2", z);
        Ok(tape.softmax(logits))
    }

    /// `(c_1, c_2)`: same-label and different-label probabilities.
    pub fn score_pair(&self, first: &str, second: &str, premise: &PremiseView) -> Result<[f64; 2]> {
        let seq = self.encode(first, second, premise)?;
        let mut tape = Tape::new();
        let c = self.forward(&self.store, &mut tape, &seq, &mut Dropout::eval())?;
        let v = tape.value(c);
        Ok([v[[0, 0]], v[[0, 1]]])
    }

    fn example_loss(&self, store: &ParamStore, seq: &TokenSequence, target: u8, seed: u64) -> Result<(f64, Vec<(String, Matrix)>)> {
        let mut tape = Tape::new();
        let mut dropout = Dropout::train(self.config.encoder.dropout, seed);
        let c = self.forward(store, &mut tape, seq, &mut dropout)?;
        let picked = tape.pick(c, &[usize::from(target)]);
        let l = tape.clamp_log(picked, EPS, 1.0 - EPS);
        let l = tape.scale(l, -1.0);
        let grads = tape.backward(l);
        Ok((tape.scalar(l), tape.param_grads(&grads)))
    }

    /// Cross-entropy training on labelled pairs.
    pub fn train(&mut self, data: &PairDataset, settings: &OptimSettings) -> Result<PairTrainReport> {
        settings.validate()?;
        let encoded: Vec<(TokenSequence, u8)> = data
            .pairs
            .iter()
            .map(|p| Ok((self.encode(&p.first, &p.second, &data.premise(p)?)?, p.label.target())))
            .collect::<Result<_>>()?;
        if encoded.is_empty() {
            return Err(Error::Degenerate("no pair examples to train on".into()));
        }
        let per_epoch = settings.steps_per_epoch(encoded.len());
        let mut stepper = Stepper::new(settings, per_epoch * settings.epochs);
        let mut epoch_loss = Vec::with_capacity(settings.epochs);
        for epoch in 0..settings.epochs {
            let order = epoch_order(encoded.len(), settings.seed, epoch);
            let mut total = 0.0;
            for (b, chunk) in order.chunks(settings.batch_size).enumerate() {
                let batch: Vec<&(TokenSequence, u8)> = chunk.iter().map(|&i| &encoded[i]).collect();
                let seed = crate::training::mix_seed(settings.seed, epoch as u64, b as u64 + 1);
                let (loss, mut grads) = batch_gradients(&self.store, &batch, seed, |store, (seq, y), s| {
                    self.example_loss(store, seq, *y, s)
                })?;
                stepper.apply(&mut self.store, &mut grads)?;
                total += loss * batch.len() as f64;
            }
            let mean = total / encoded.len() as f64;
            log::info!("pair network epoch {epoch}: loss {mean:.4}");
            epoch_loss.push(mean);
        }
        let train_accuracy = self.accuracy(data)?;
        Ok(PairTrainReport { epoch_loss, train_accuracy })
    }

    /// Share of pairs whose argmax matches the label.
    pub fn accuracy(&self, data: &PairDataset) -> Result<f64> {
        let mut counts = ConfusionCounts::default();
        for p in &data.pairs {
            let c = self.score_pair(&p.first, &p.second, &data.premise(p)?)?;
            counts.record(c[1] > c[0], p.label.target() == 1);
        }
        Ok((counts.tp + counts.tn) as f64 / counts.total().max(1) as f64)
    }

    pub fn judge_example(&self, data: &PairDataset, pair: &PairExample) -> Result<[f64; 2]> {
        self.score_pair(&pair.first, &pair.second, &data.premise(pair)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join("config.json");
        std::fs::write(&cfg, serde_json::to_string_pretty(&self.config)?).map_err(|e| Error::io(&cfg, e))?;
        self.tokenizer.save(&dir.join("vocab.json"))?;
        save_container(&dir.join("params"), &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = dir.join("config.json");
        let text = std::fs::read_to_string(&cfg).map_err(|e| Error::io(&cfg, e))?;
        let config: ConsistencyConfig = serde_json::from_str(&text)?;
        let tokenizer = Tokenizer::load(&dir.join("vocab.json"))?;
        let store = load_container(&dir.join("params"))?;
        let fresh = Self::init(config, tokenizer, 0)?;
        let layout: Vec<(String, (usize, usize))> = fresh.store.iter().map(|(k, v)| (k.clone(), v.dim())).collect();
        crate::container::check_layout(&store, &layout)?;
        Ok(Self { store, ..fresh })
    }
}

impl PairJudge for ConsistencyModel {
    fn same_label(&self, first: &str, second: &str, premise: &PremiseView) -> Result<f64> {
        Ok(self.score_pair(first, second, premise)?[0])
    }
}
