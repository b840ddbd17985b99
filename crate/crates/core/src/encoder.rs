//! Joint semantics encoder: token, position and segment embeddings followed
//! by a stack of post-LN transformer blocks.
//!
//! Parameter layout (names as stored in a container, `d` = width, `V` =
//! vocabulary size, `P` = maximum positions, `F` = feed-forward width):
//!
//! | name | shape |
//! |------|-------|
//! | `tok_emb` | `V x d` |
//! | `pos_emb` | `P x d` |
//! | `type_emb` | `2 x d` |
//! | `emb_ln.g`, `emb_ln.b` | `1 x d` |
//! | `layer{l}.attn.{q,k,v,o}.w` | `d x d` |
//! | `layer{l}.attn.{q,k,v,o}.b` | `1 x d` |
//! | `layer{l}.ln1.{g,b}`, `layer{l}.ln2.{g,b}` | `1 x d` |
//! | `layer{l}.ff1.w` / `.b` | `d x F` / `1 x F` |
//! | `layer{l}.ff2.w` / `.b` | `F x d` / `1 x d` |
//!
//! Layers are numbered from 0. An optional `encoder.json` next to the
//! container records the head count, dropout rate and layer-norm epsilon.

use std::path::Path;

use autodiff::{Matrix, ParamStore, Tape, Var};
use ndarray::{concatenate, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{check_layout, load_container, save_container};
use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::nn::{self, BlockShape, Dropout, Layout, Scope};

pub const SIDE_CONFIG: &str = "encoder.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_positions: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_eps")]
    pub ln_eps: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_dropout() -> f64 {
    0.1
}

fn default_eps() -> f64 {
    1e-12
}

fn default_init_std() -> f64 {
    0.02
}

impl EncoderConfig {
    /// Small encoder for desk-scale runs.
    pub fn toy(vocab_size: usize, max_positions: usize) -> Self {
        Self {
            vocab_size,
            d: 32,
            layers: 2,
            heads: 2,
            ff: 64,
            max_positions,
            dropout: 0.1,
            ln_eps: 1e-12,
            init_std: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.d == 0 || self.layers == 0 || self.ff == 0 || self.max_positions == 0 {
            return bad(format!("encoder dimensions must be positive: {self:?}"));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("width {} is not divisible by {} heads", self.d, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    fn block(&self) -> BlockShape {
        BlockShape { d: self.d, heads: self.heads, ff: self.ff }
    }

    pub fn layout(&self) -> Layout {
        let d = self.d;
        let mut l: Layout = vec![
            ("tok_emb".into(), (self.vocab_size, d)),
            ("pos_emb".into(), (self.max_positions, d)),
            ("type_emb".into(), (2, d)),
        ];
        l.extend(nn::layer_norm_layout("emb_ln", d));
        for i in 0..self.layers {
            l.extend(nn::block_layout(&format!("layer{i}"), self.block()));
        }
        l
    }
}

/// Encoder weights; array names carry no prefix.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub store: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct SideConfig {
    heads: usize,
    dropout: f64,
    ln_eps: f64,
}

impl EncoderParams {
    /// Random initialisation: normal(0, init_std) weights, unit layer-norm
    /// gains, zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        let mut store = ParamStore::new();
        store.insert("tok_emb", nn::normal(&mut rng, config.vocab_size, config.d, std));
        store.insert("pos_emb", nn::normal(&mut rng, config.max_positions, config.d, std));
        store.insert("type_emb", nn::normal(&mut rng, 2, config.d, std));
        nn::init_layer_norm(&mut store, "emb_ln", config.d);
        for i in 0..config.layers {
            nn::init_block(&mut store, &mut rng, &format!("layer{i}"), config.block(), std);
        }
        Ok(Self { config, store })
    }

    pub fn layers(&self) -> usize {
        self.config.layers
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn max_positions(&self) -> usize {
        self.config.max_positions
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        check_layout(&self.store, &self.config.layout())
    }

    /// Builds parameters from a bare array store, inferring the dimensions
    /// from the array shapes.
    pub fn from_store(store: ParamStore, heads: Option<usize>, dropout: f64, ln_eps: f64) -> Result<Self> {
        let shape = |name: &str| {
            store
                .get(name)
                .map(|a| a.dim())
                .ok_or_else(|| Error::Import { array: name.into(), reason: "missing".into() })
        };
        let (vocab_size, d) = shape("tok_emb")?;
        let (max_positions, _) = shape("pos_emb")?;
        let layers = store
            .names()
            .filter_map(|n| n.strip_prefix("layer")?.split('.').next()?.parse::<usize>().ok())
            .max()
            .map_or(0, |l| l + 1);
        if layers == 0 {
            return Err(Error::Import { array: "layer0.attn.q.w".into(), reason: "missing".into() });
        }
        let (_, ff) = shape("layer0.ff1.w")?;
        let heads = heads.unwrap_or_else(|| (d / 64).max(1));
        let config = EncoderConfig {
            vocab_size,
            d,
            layers,
            heads,
            ff,
            max_positions,
            dropout,
            ln_eps,
            init_std: default_init_std(),
        };
        config.validate()?;
        let params = Self { config, store };
        check_layout(&params.store, &params.config.layout())?;
        Ok(params)
    }

    /// Writes the arrays as a container plus the `encoder.json` side file.
    pub fn export(&self, dir: &Path) -> Result<()> {
        save_container(dir, &self.store)?;
        let side = SideConfig { heads: self.config.heads, dropout: self.config.dropout, ln_eps: self.config.ln_eps };
        let path = dir.join(SIDE_CONFIG);
        std::fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&path, e))
    }
}

/// Loads encoder weights from a container directory.
pub fn import_parameters(dir: &Path) -> Result<EncoderParams> {
    let store = load_container(dir)?;
    let side_path = dir.join(SIDE_CONFIG);
    let side = if side_path.exists() {
        let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        Some(serde_json::from_str::<SideConfig>(&text)?)
    } else {
        None
    };
    EncoderParams::from_store(
        store,
        side.as_ref().map(|s| s.heads),
        side.as_ref().map_or(default_dropout(), |s| s.dropout),
        side.as_ref().map_or(default_eps(), |s| s.ln_eps),
    )
}

/// Appends freshly initialised rows, normal(0, 0.02) from `seed`, to the
/// position table. Existing rows are copied unchanged.
pub fn extend_positions(params: &EncoderParams, new_max: usize, seed: u64) -> Result<EncoderParams> {
    let old = params.config.max_positions;
    if new_max <= old {
        return Err(Error::Argument(format!(
            "new position count {new_max} must exceed the current {old}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fresh = nn::normal(&mut rng, new_max - old, params.config.d, 0.02);
    let table = params.store.get("pos_emb").expect("validated layout");
    let extended = concatenate(Axis(0), &[table.view(), fresh.view()]).expect("matching widths");
    let mut out = params.clone();
    out.store.insert("pos_emb", extended);
    out.config.max_positions = new_max;
    Ok(out)
}

/// Checks ids and length of `seq` against `config`.
pub fn check_sequence(seq: &TokenSequence, config: &EncoderConfig) -> Result<()> {
    if seq.len() > config.max_positions {
        return Err(Error::Length { len: seq.len(), max: config.max_positions });
    }
    if let Some(&bad) = seq.token_ids.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::Encoding(format!(
            "token id {bad} outside vocabulary of size {}",
            config.vocab_size
        )));
    }
    Ok(())
}

/// Records the encoder forward pass on `tape`, binding arrays as
/// `{scope.prefix}{name}`. Returns the `N x d` token representations.
pub fn encode_on_tape(
    tape: &mut Tape,
    scope: Scope,
    config: &EncoderConfig,
    seq: &TokenSequence,
    dropout: &mut Dropout,
) -> Result<Var> {
    check_sequence(seq, config)?;
    let ids: Vec<usize> = seq.token_ids.iter().map(|&t| t as usize).collect();
    let types: Vec<usize> = seq.type_ids.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..seq.len()).collect();
    let tok = scope.bind(tape, "tok_emb");
    let pos = scope.bind(tape, "pos_emb");
    let typ = scope.bind(tape, "type_emb");
    let e = tape.gather_rows(tok, &ids);
    let p = tape.gather_rows(pos, &positions);
    let t = tape.gather_rows(typ, &types);
    let x = tape.add(e, p);
    let x = tape.add(x, t);
    let x = nn::layer_norm(tape, scope, "emb_ln", x, config.ln_eps);
    let mut h = dropout.apply(tape, x);
    for l in 0..config.layers {
        h = nn::transformer_block(tape, scope, &format!("layer{l}"), h, config.heads, config.ln_eps, dropout);
    }
    Ok(h)
}

/// Eval-mode encoding of one sequence.
pub fn embed_and_encode(seq: &TokenSequence, params: &EncoderParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let h = encode_on_tape(&mut tape, Scope::new(&params.store, ""), &params.config, seq, &mut Dropout::eval())?;
    Ok(tape.value(h).clone())
}
