//! Multi-granularity inference network.
//!
//! On top of the joint encoder's token representations, sentences are
//! pooled into one row each (hypothesis first), contextualised by a
//! sentence-level encoder, and paired token-by-token with the hypothesis by a
//! token-level encoder. Classifier A reads the sentence-level global vector;
//! classifier B scores each premise sentence from its sentence-level and
//! token-level vectors.
//!
//! Parameter names (no prefix), `d` = encoder width:
//!
//! * BiLSTM sentence encoder: `sent.fwd.*`, `sent.bwd.*` (LSTM `d -> d`),
//!   `sent.w1.{w,b}` (`2d -> d`, per-sentence projection),
//!   `sent.w2.{w,b}` (`2d -> d`, global projection)
//! * transformer sentence encoder: `sent.pos` (`max_sentences x d`),
//!   `sent.layer{l}.*` blocks
//! * BiLSTM token encoder: `tok.fwd.*`, `tok.bwd.*`, `tok.w3.{w,b}` (`2d -> d`)
//! * classifier A: `cls_a.1.{w,b}` (`d -> d`), `cls_a.2.{w,b}` (`d -> 2`)
//! * classifier B: `cls_b.{w,b}` (`k·d -> 1`, `k` = number of active
//!   granularities)
//!
//! LSTM weights are packed as `wx` (`in x 4h`), `wh` (`h x 4h`), `b`
//! (`1 x 4h`) in input, forget, cell, output gate order.

mod forward;

use std::path::Path;

use autodiff::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{check_layout, load_container, save_container};
use crate::error::{Error, Result};
use crate::nn::{self, BlockShape, Layout};

pub use forward::{
    classify_entailment, mgnet_forward, mgnet_on_tape, pool_sentences, score_evidence, sentence_encode_bilstm,
    sentence_encode_transformer, token_encode_bilstm, token_encode_maxpool, MGNetOutput, MGNetVars, Pooled,
};

pub const CONFIG_FILE: &str = "mgnet.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceEncoderKind {
    Bilstm,
    Transformer,
    /// No sentence-level contextualisation (ablation). Classifier A reads the
    /// pooled hypothesis row and classifier B sees only token-level vectors.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenEncoderKind {
    Bilstm,
    Maxpool,
    /// No token-level vectors (ablation); classifier B sees only
    /// sentence-level vectors.
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Max,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MGNetConfig {
    pub sentence_encoder: SentenceEncoderKind,
    pub token_encoder: TokenEncoderKind,
    #[serde(default)]
    pub pooling: Pooling,
    pub d: usize,
    /// Layer count of the sentence-level transformer.
    pub sentence_layers: usize,
    pub sentence_heads: usize,
    pub sentence_ff: usize,
    /// Rows in the sentence position table.
    pub max_sentences: usize,
    pub dropout: f64,
    pub ln_eps: f64,
}

impl MGNetConfig {
    pub fn new(sentence_encoder: SentenceEncoderKind, token_encoder: TokenEncoderKind, d: usize) -> Self {
        Self {
            sentence_encoder,
            token_encoder,
            pooling: Pooling::Max,
            d,
            sentence_layers: 1,
            sentence_heads: 1,
            sentence_ff: 2 * d,
            max_sentences: 128,
            dropout: 0.1,
            ln_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("MGNet width must be positive".into()));
        }
        if self.sentence_encoder == SentenceEncoderKind::None && self.token_encoder == TokenEncoderKind::None {
            return Err(Error::Config("at least one granularity must be enabled".into()));
        }
        if self.sentence_encoder == SentenceEncoderKind::Transformer {
            if self.sentence_layers == 0 || self.sentence_heads == 0 || self.d % self.sentence_heads != 0 {
                return Err(Error::Config(format!(
                    "sentence transformer needs layers >= 1 and heads dividing {}: {} layers, {} heads",
                    self.d, self.sentence_layers, self.sentence_heads
                )));
            }
            if self.max_sentences == 0 {
                return Err(Error::Config("max_sentences must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn evidence_inputs(&self) -> usize {
        usize::from(self.sentence_encoder != SentenceEncoderKind::None)
            + usize::from(self.token_encoder != TokenEncoderKind::None)
    }

    fn block(&self) -> BlockShape {
        BlockShape { d: self.d, heads: self.sentence_heads, ff: self.sentence_ff }
    }

    pub fn layout(&self) -> Layout {
        let d = self.d;
        let mut l = Layout::new();
        match self.sentence_encoder {
            SentenceEncoderKind::Bilstm => {
                l.extend(nn::lstm_layout("sent.fwd", d, d));
                l.extend(nn::lstm_layout("sent.bwd", d, d));
                l.extend(nn::linear_layout("sent.w1", 2 * d, d));
                l.extend(nn::linear_layout("sent.w2", 2 * d, d));
            }
            SentenceEncoderKind::Transformer => {
                l.push(("sent.pos".into(), (self.max_sentences, d)));
                for i in 0..self.sentence_layers {
                    l.extend(nn::block_layout(&format!("sent.layer{i}"), self.block()));
                }
            }
            SentenceEncoderKind::None => {}
        }
        if self.token_encoder == TokenEncoderKind::Bilstm {
            l.extend(nn::lstm_layout("tok.fwd", d, d));
            l.extend(nn::lstm_layout("tok.bwd", d, d));
            l.extend(nn::linear_layout("tok.w3", 2 * d, d));
        }
        l.extend(nn::linear_layout("cls_a.1", d, d));
        l.extend(nn::linear_layout("cls_a.2", d, 2));
        l.extend(nn::linear_layout("cls_b", self.evidence_inputs() * d, 1));
        l
    }
}

#[derive(Clone, Debug)]
pub struct MGNetParams {
    pub config: MGNetConfig,
    pub store: ParamStore,
}

impl MGNetParams {
    pub fn init(config: MGNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let fan = |n: usize| (1.0 / n as f64).sqrt();
        let mut store = ParamStore::new();
        match config.sentence_encoder {
            SentenceEncoderKind::Bilstm => {
                nn::init_lstm(&mut store, &mut rng, "sent.fwd", d, d);
                nn::init_lstm(&mut store, &mut rng, "sent.bwd", d, d);
                nn::init_linear(&mut store, &mut rng, "sent.w1", 2 * d, d, fan(2 * d));
                nn::init_linear(&mut store, &mut rng, "sent.w2", 2 * d, d, fan(2 * d));
            }
            SentenceEncoderKind::Transformer => {
                store.insert("sent.pos", nn::normal(&mut rng, config.max_sentences, d, 0.02));
                for i in 0..config.sentence_layers {
                    nn::init_block(&mut store, &mut rng, &format!("sent.layer{i}"), config.block(), 0.02);
                }
            }
            SentenceEncoderKind::None => {}
        }
        if config.token_encoder == TokenEncoderKind::Bilstm {
            nn::init_lstm(&mut store, &mut rng, "tok.fwd", d, d);
            nn::init_lstm(&mut store, &mut rng, "tok.bwd", d, d);
            nn::init_linear(&mut store, &mut rng, "tok.w3", 2 * d, d, fan(2 * d));
        }
        nn::init_linear(&mut store, &mut rng, "cls_a.1", d, d, fan(d));
        nn::init_linear(&mut store, &mut rng, "cls_a.2", d, 2, fan(d));
        let k = config.evidence_inputs() * d;
        nn::init_linear(&mut store, &mut rng, "cls_b", k, 1, fan(k));
        Ok(Self { config, store })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        check_layout(&self.store, &self.config.layout())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_container(dir, &self.store)?;
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self.config)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config: MGNetConfig = serde_json::from_str(&text)?;
        let params = Self { config, store: load_container(dir)? };
        params.validate()?;
        Ok(params)
    }
}
