//! Layers shared by the encoder, MGNet and the consistency network, written
//! against the autodiff tape.
//!
//! Layers bind parameters through a [`Scope`], which prepends a fixed prefix
//! to every name so that several models can live in one parameter store.
//! Weights use the row-vector convention: a linear layer computes `x·W + b`
//! with `W` stored as `in x out`.

use autodiff::{Matrix, ParamStore, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Parameter names expected by a layer, with their shapes.
pub type Layout = Vec<(String, (usize, usize))>;

#[derive(Clone, Copy)]
pub struct Scope<'a> {
    pub store: &'a ParamStore,
    pub prefix: &'a str,
}

impl<'a> Scope<'a> {
    pub fn new(store: &'a ParamStore, prefix: &'a str) -> Self {
        Self { store, prefix }
    }

    pub fn bind(&self, tape: &mut Tape, name: &str) -> Var {
        if self.prefix.is_empty() {
            tape.param(self.store, name)
        } else {
            tape.param(self.store, &format!("{}{name}", self.prefix))
        }
    }

    pub fn get(&self, name: &str) -> Option<&'a Matrix> {
        self.store.get(&format!("{}{name}", self.prefix))
    }
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("valid std");
    Matrix::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Dropout with a private RNG; the evaluation variant is the identity.
pub struct Dropout {
    p: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn eval() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn train(p: f64, seed: u64) -> Self {
        Self { p, rng: Some(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        if self.p <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.p;
        let (r, c) = tape.value(x).dim();
        let mask = Matrix::from_shape_simple_fn((r, c), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        tape.mul_const(x, mask)
    }
}

// ---- linear ----------------------------------------------------------------

pub fn linear_layout(prefix: &str, input: usize, output: usize) -> Layout {
    vec![(format!("{prefix}.w"), (input, output)), (format!("{prefix}.b"), (1, output))]
}

pub fn init_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, output: usize, std: f64) {
    store.insert(format!("{prefix}.w"), normal(rng, input, output, std));
    store.insert(format!("{prefix}.b"), Matrix::zeros((1, output)));
}

pub fn linear(tape: &mut Tape, s: Scope, prefix: &str, x: Var) -> Var {
    let w = s.bind(tape, &format!("{prefix}.w"));
    let b = s.bind(tape, &format!("{prefix}.b"));
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

// ---- layer norm --------------------------------------------------------------

pub fn layer_norm_layout(prefix: &str, d: usize) -> Layout {
    vec![(format!("{prefix}.g"), (1, d)), (format!("{prefix}.b"), (1, d))]
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.g"), Matrix::ones((1, d)));
    store.insert(format!("{prefix}.b"), Matrix::zeros((1, d)));
}

pub fn layer_norm(tape: &mut Tape, s: Scope, prefix: &str, x: Var, eps: f64) -> Var {
    let g = s.bind(tape, &format!("{prefix}.g"));
    let b = s.bind(tape, &format!("{prefix}.b"));
    let n = tape.layer_norm(x, eps);
    let y = tape.mul_row(n, g);
    tape.add_row(y, b)
}

// ---- transformer block -------------------------------------------------------

/// Width settings of one post-LN transformer block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub d: usize,
    pub heads: usize,
    pub ff: usize,
}

pub fn block_layout(prefix: &str, shape: BlockShape) -> Layout {
    let d = shape.d;
    let mut l = Layout::new();
    for p in ["q", "k", "v", "o"] {
        l.extend(linear_layout(&format!("{prefix}.attn.{p}"), d, d));
    }
    l.extend(layer_norm_layout(&format!("{prefix}.ln1"), d));
    l.extend(linear_layout(&format!("{prefix}.ff1"), d, shape.ff));
    l.extend(linear_layout(&format!("{prefix}.ff2"), shape.ff, d));
    l.extend(layer_norm_layout(&format!("{prefix}.ln2"), d));
    l
}

pub fn init_block(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, shape: BlockShape, std: f64) {
    let d = shape.d;
    for p in ["q", "k", "v", "o"] {
        init_linear(store, rng, &format!("{prefix}.attn.{p}"), d, d, std);
    }
    init_layer_norm(store, &format!("{prefix}.ln1"), d);
    init_linear(store, rng, &format!("{prefix}.ff1"), d, shape.ff, std);
    init_linear(store, rng, &format!("{prefix}.ff2"), shape.ff, d, std);
    init_layer_norm(store, &format!("{prefix}.ln2"), d);
}

/// Multi-head scaled dot-product self-attention over the rows of `x`.
pub fn self_attention(tape: &mut Tape, s: Scope, prefix: &str, x: Var, heads: usize) -> Var {
    let d = tape.value(x).ncols();
    assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let q = linear(tape, s, &format!("{prefix}.q"), x);
    let k = linear(tape, s, &format!("{prefix}.k"), x);
    let v = linear(tape, s, &format!("{prefix}.v"), x);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, h * dh, dh), tape.slice_cols(k, h * dh, dh), tape.slice_cols(v, h * dh, dh))
        };
        let scores = tape.matmul_t(qh, kh);
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax(scores);
        outs.push(tape.matmul(attn, vh));
    }
    let ctx = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    linear(tape, s, &format!("{prefix}.o"), ctx)
}

/// `LN(h + FF(h))` with `h = LN(x + Attn(x))`.
pub fn transformer_block(
    tape: &mut Tape,
    s: Scope,
    prefix: &str,
    x: Var,
    heads: usize,
    eps: f64,
    dropout: &mut Dropout,
) -> Var {
    let a = self_attention(tape, s, &format!("{prefix}.attn"), x, heads);
    let a = dropout.apply(tape, a);
    let h = tape.add(x, a);
    let h = layer_norm(tape, s, &format!("{prefix}.ln1"), h, eps);
    let f = linear(tape, s, &format!("{prefix}.ff1"), h);
    let f = tape.gelu(f);
    let f = linear(tape, s, &format!("{prefix}.ff2"), f);
    let f = dropout.apply(tape, f);
    let o = tape.add(h, f);
    layer_norm(tape, s, &format!("{prefix}.ln2"), o, eps)
}

// ---- LSTM --------------------------------------------------------------------

/// Gate order in the packed weights: input, forget, cell, output.
pub fn lstm_layout(prefix: &str, input: usize, hidden: usize) -> Layout {
    vec![
        (format!("{prefix}.wx"), (input, 4 * hidden)),
        (format!("{prefix}.wh"), (hidden, 4 * hidden)),
        (format!("{prefix}.b"), (1, 4 * hidden)),
    ]
}

pub fn init_lstm(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    store.insert(format!("{prefix}.wx"), normal(rng, input, 4 * hidden, (1.0 / input as f64).sqrt()));
    store.insert(format!("{prefix}.wh"), normal(rng, hidden, 4 * hidden, (1.0 / hidden as f64).sqrt()));
    store.insert(format!("{prefix}.b"), Matrix::zeros((1, 4 * hidden)));
}

/// Runs an LSTM over the rows of `x` from zero initial state and returns the
/// hidden state at every position, in row order. With `reverse` the
/// recurrence starts at the last row, so entry `t` summarises rows `t..`.
pub fn lstm(tape: &mut Tape, s: Scope, prefix: &str, x: Var, reverse: bool) -> Vec<Var> {
    let wx = s.bind(tape, &format!("{prefix}.wx"));
    let wh = s.bind(tape, &format!("{prefix}.wh"));
    let b = s.bind(tape, &format!("{prefix}.b"));
    let hidden = tape.value(wh).nrows();
    let n = tape.value(x).nrows();
    let xw = tape.matmul(x, wx);
    let xw = tape.add_row(xw, b);
    let mut state = tape.constant(Matrix::zeros((1, 2 * hidden)));
    let mut states = Vec::with_capacity(n);
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        state = tape.lstm_step(xw, t, state, wh);
        states.push((t, tape.slice_cols(state, 0, hidden)));
    }
    states.sort_by_key(|&(t, _)| t);
    states.into_iter().map(|(_, h)| h).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_lstm_outputs_zero() {
        let mut store = ParamStore::new();
        store.insert("l.wx", Matrix::zeros((2, 12)));
        store.insert("l.wh", Matrix::zeros((3, 12)));
        store.insert("l.b", Matrix::zeros((1, 12)));
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, -2.0], [0.5, 0.5]]);
        let hs = lstm(&mut tape, Scope::new(&store, ""), "l", x, false);
        for h in hs {
            assert!(tape.value(h).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn lstm_matches_scalar_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        init_lstm(&mut store, &mut rng, "l", 1, 1);
        store.insert("l.b", array![[0.1, 0.2, -0.3, 0.4]]);
        let xs = [0.3, -1.2, 0.7];
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_shape_vec((3, 1), xs.to_vec()).unwrap());
        let hs = lstm(&mut tape, Scope::new(&store, ""), "l", x, false);

        let wx = store.get("l.wx").unwrap();
        let wh = store.get("l.wh").unwrap();
        let b = store.get("l.b").unwrap();
        let sig = autodiff::sigmoid;
        let (mut h, mut c) = (0.0f64, 0.0f64);
        for (t, &xt) in xs.iter().enumerate() {
            let z: Vec<f64> = (0..4).map(|k| xt * wx[[0, k]] + h * wh[[0, k]] + b[[0, k]]).collect();
            c = sig(z[1]) * c + sig(z[0]) * z[2].tanh();
            h = sig(z[3]) * c.tanh();
            assert!((tape.value(hs[t])[[0, 0]] - h).abs() < 1e-14);
        }
    }

    #[test]
    fn eval_dropout_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, 2.0]]);
        let mut d = Dropout::eval();
        assert_eq!(d.apply(&mut tape, x), x);
    }
}
