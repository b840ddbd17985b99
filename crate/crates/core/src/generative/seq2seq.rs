//! Character-level encoder-decoder used as the desk-scale sequence scorer.
//!
//! The encoder is a BiLSTM over input characters; the max-pooled states set
//! the decoder's initial hidden state and are also fed to the output layer
//! at every step. The probability of a target is the product of per-character
//! probabilities under teacher forcing, ending with an end-of-sequence symbol.

use std::collections::BTreeSet;
use std::path::Path;

use autodiff::{Matrix, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{input_for, SequenceScorer, CONTRADICTION_WORD, ENTAILMENT_WORD};
use crate::container::{check_layout, load_container, save_container};
use crate::corpus::{Dataset, Label};
use crate::error::{Error, Result};
use crate::nn::{self, Dropout, Layout, Scope};
use crate::training::{batch_gradients, epoch_order, mix_seed, OptimSettings, Stepper};

const BOS: usize = 0;
const EOS: usize = 1;
const UNK: usize = 2;
const RESERVED: usize = 3;

/// Character inventory; ids 0..3 are begin, end and unknown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
}

impl CharVocab {
    /// Every character of `texts` plus the label words.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: BTreeSet<char> = ENTAILMENT_WORD.chars().chain(CONTRADICTION_WORD.chars()).collect();
        for t in texts {
            set.extend(t.chars());
        }
        Self { chars: set.into_iter().collect() }
    }

    pub fn size(&self) -> usize {
        self.chars.len() + RESERVED
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars()
            .map(|c| self.chars.binary_search(&c).map_or(UNK, |i| i + RESERVED))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    /// Character embedding width.
    pub d: usize,
    /// LSTM state width (per direction in the encoder).
    pub hidden: usize,
    /// Inputs are cut to this many leading characters.
    pub max_input_chars: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Seq2SeqConfig {
    pub fn toy() -> Self {
        Self { d: 16, hidden: 24, max_input_chars: 320, dropout: 0.1, init_std: 0.25 }
    }

    fn layout(&self, vocab: usize) -> Layout {
        let h = self.hidden;
        let mut l: Layout = vec![("emb".into(), (vocab, self.d))];
        l.extend(nn::lstm_layout("enc.fwd", self.d, h));
        l.extend(nn::lstm_layout("enc.bwd", self.d, h));
        l.extend(nn::linear_layout("bridge", 2 * h, h));
        l.extend(nn::lstm_layout("dec", self.d, h));
        l.extend(nn::linear_layout("out", 3 * h, vocab));
        l
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.hidden == 0 || self.max_input_chars == 0 {
            return Err(Error::Config("seq2seq widths and input budget must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqTrainReport {
    pub epoch_loss: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CharSeq2Seq {
    pub config: Seq2SeqConfig,
    pub vocab: CharVocab,
    pub store: ParamStore,
}

impl CharSeq2Seq {
    pub fn init(config: Seq2SeqConfig, vocab: CharVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let (v, d, h) = (vocab.size(), config.d, config.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.insert("emb", nn::normal(&mut rng, v, d, config.init_std));
        nn::init_lstm(&mut store, &mut rng, "enc.fwd", d, h);
        nn::init_lstm(&mut store, &mut rng, "enc.bwd", d, h);
        nn::init_linear(&mut store, &mut rng, "bridge", 2 * h, h, config.init_std);
        nn::init_lstm(&mut store, &mut rng, "dec", d, h);
        nn::init_linear(&mut store, &mut rng, "out", 3 * h, v, config.init_std);
        Ok(Self { config, vocab, store })
    }

    fn input_ids(&self, input: &str) -> Result<Vec<usize>> {
        let mut ids = self.vocab.encode(input);
        ids.truncate(self.config.max_input_chars);
        if ids.is_empty() {
            return Err(Error::Argument("empty scorer input".into()));
        }
        Ok(ids)
    }

    /// Summed log-probability of `target` followed by end-of-sequence.
    fn log_prob(&self, store: &ParamStore, tape: &mut Tape, input: &[usize], target: &[usize], dropout: &mut Dropout) -> Var {
        let s = Scope::new(store, "");
        let h = self.config.hidden;
        let emb = s.bind(tape, "emb");
        let x = tape.gather_rows(emb, input);
        let x = dropout.apply(tape, x);
        let fwd = nn::lstm(tape, s, "enc.fwd", x, false);
        let bwd = nn::lstm(tape, s, "enc.bwd", x, true);
        let f = tape.concat_rows(&fwd);
        let b = tape.concat_rows(&bwd);
        let states = tape.concat_cols(&[f, b]);
        let pooled = tape.max_rows(states);
        let ctx = nn::linear(tape, s, "bridge", pooled);
        let ctx = tape.tanh(ctx);

        let mut dec_in = Vec::with_capacity(target.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(target);
        let mut gold = target.to_vec();
        gold.push(EOS);
        let y = tape.gather_rows(emb, &dec_in);
        let wx = s.bind(tape, "dec.wx");
        let wh = s.bind(tape, "dec.wh");
        let bias = s.bind(tape, "dec.b");
        let yw = tape.matmul(y, wx);
        let yw = tape.add_row(yw, bias);
        let zeros = tape.constant(Matrix::zeros((1, h)));
        let mut state = tape.concat_cols(&[ctx, zeros]);
        let mut rows = Vec::with_capacity(dec_in.len());
        for t in 0..dec_in.len() {
            state = tape.lstm_step(yw, t, state, wh);
            let hs = tape.slice_cols(state, 0, h);
            rows.push(tape.concat_cols(&[hs, pooled]));
        }
        let hs = tape.concat_rows(&rows);
        let hs = dropout.apply(tape, hs);
        let logits = nn::linear(tape, s, "out", hs);
        let logp = tape.log_softmax(logits, None);
        let picked = tape.pick(logp, &gold);
        tape.sum(picked)
    }

    /// Probability of `target` given `input` in eval mode.
    pub fn sequence_probability(&self, input: &str, target: &str) -> Result<f64> {
        let ids = self.input_ids(input)?;
        let tgt = self.vocab.encode(target);
        let mut tape = Tape::new();
        let lp = self.log_prob(&self.store, &mut tape, &ids, &tgt, &mut Dropout::eval());
        Ok(tape.scalar(lp).exp())
    }

    /// Teacher-forced training on the label words of every labelled instance.
    pub fn train(&mut self, data: &Dataset, settings: &OptimSettings) -> Result<Seq2SeqTrainReport> {
        settings.validate()?;
        let examples: Vec<(Vec<usize>, Vec<usize>)> = data
            .instances
            .iter()
            .filter_map(|inst| inst.label.map(|l| (inst, l)))
            .map(|(inst, label)| {
                let word = match label {
                    Label::Entailment => ENTAILMENT_WORD,
                    Label::Contradiction => CONTRADICTION_WORD,
                };
                Ok((self.input_ids(&input_for(inst, &data.trials)?)?, self.vocab.encode(word)))
            })
            .collect::<Result<_>>()?;
        if examples.is_empty() {
            return Err(Error::Degenerate("no labelled instances to train the scorer on".into()));
        }
        let per_epoch = settings.steps_per_epoch(examples.len());
        let mut stepper = Stepper::new(settings, per_epoch * settings.epochs);
        let mut epoch_loss = Vec::with_capacity(settings.epochs);
        for epoch in 0..settings.epochs {
            let order = epoch_order(examples.len(), settings.seed, epoch);
            let mut total = 0.0;
            for (b, chunk) in order.chunks(settings.batch_size).enumerate() {
                let batch: Vec<&(Vec<usize>, Vec<usize>)> = chunk.iter().map(|&i| &examples[i]).collect();
                let seed = mix_seed(settings.seed, epoch as u64, b as u64 + 1);
                let (loss, mut grads) = batch_gradients(&self.store, &batch, seed, |store, (input, target), s| {
                    let mut tape = Tape::new();
                    let mut dropout = Dropout::train(self.config.dropout, s);
                    let lp = self.log_prob(store, &mut tape, input, target, &mut dropout);
                    let loss = tape.scale(lp, -1.0);
                    let g = tape.backward(loss);
                    Ok((tape.scalar(loss), tape.param_grads(&g)))
                })?;
                stepper.apply(&mut self.store, &mut grads)?;
                total += loss * batch.len() as f64;
            }
            let mean = total / examples.len() as f64;
            log::info!("scorer epoch {epoch}: loss {mean:.4}");
            epoch_loss.push(mean);
        }
        Ok(Seq2SeqTrainReport { epoch_loss })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("config.json", serde_json::to_string_pretty(&self.config)?),
            ("chars.json", serde_json::to_string(&self.vocab)?),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        save_container(&dir.join("params"), &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let config: Seq2SeqConfig = serde_json::from_str(&read("config.json")?)?;
        let vocab: CharVocab = serde_json::from_str(&read("chars.json")?)?;
        config.validate()?;
        let store = load_container(&dir.join("params"))?;
        check_layout(&store, &config.layout(vocab.size()))?;
        Ok(Self { config, vocab, store })
    }
}

impl SequenceScorer for CharSeq2Seq {
    fn score(&self, input: &str, target: &str) -> std::result::Result<f64, String> {
        self.sequence_probability(input, target).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticConfig};
    use crate::ensemble::Warmup;
    use crate::generative::{score_instance, CONTRADICTION_WORD};
    use crate::training::OptimizerKind;

    fn small() -> (CharSeq2Seq, Dataset) {
        let ds = generate_synthetic(2, 8, &SyntheticConfig::default()).unwrap();
        let texts: Vec<String> = ds.instances.iter().map(|i| input_for(i, &ds.trials).unwrap()).collect();
        let vocab = CharVocab::build(texts.iter().map(String::as_str));
        let cfg = Seq2SeqConfig { d: 6, hidden: 8, max_input_chars: 60, dropout: 0.0, init_std: 0.3 };
        (CharSeq2Seq::init(cfg, vocab, 4).unwrap(), ds)
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let v = CharVocab::build(["ab"]);
        assert_eq!(v.encode("a~"), vec![v.encode("a")[0], UNK]);
    }

    #[test]
    fn probabilities_are_in_unit_interval_and_deterministic() {
        let (m, _) = small();
        let p = m.sequence_probability("nli hypothesis: x premise: y", ENTAILMENT_WORD).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(p, m.sequence_probability("nli hypothesis: x premise: y", ENTAILMENT_WORD).unwrap());
        assert!(m.sequence_probability("", ENTAILMENT_WORD).is_err());
    }

    #[test]
    fn training_reduces_loss_and_scores_normalise() {
        let (mut m, ds) = small();
        let settings = OptimSettings {
            optimizer: OptimizerKind::Adafactor,
            lr_encoder: 1e-2,
            lr_other: 1e-2,
            batch_size: 4,
            epochs: 6,
            warmup: Warmup::Steps(0),
            clip_norm: 1.0,
            seed: 1,
        };
        let r = m.train(&ds, &settings).unwrap();
        assert!(r.epoch_loss.last().unwrap() < r.epoch_loss.first().unwrap(), "{:?}", r.epoch_loss);
        let p = score_instance(&m, &ds.instances[0], &ds.trials).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(m.score("nli hypothesis: a premise: b", CONTRADICTION_WORD).unwrap() > 0.0);
    }

    #[test]
    fn save_load_round_trip() {
        let (m, _) = small();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = CharSeq2Seq::load(dir.path()).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(back.vocab, m.vocab);
    }
}
