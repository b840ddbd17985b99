//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. [`Tape::backward`] walks the nodes in reverse insertion
//! order, which is a valid topological order because a node can only refer to
//! nodes created before it.
//!
//! All values are 2-D matrices. Row vectors (`1 x n`) stand in for vectors and
//! `1 x 1` matrices for scalars.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::params::ParamStore;
use crate::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    ClampLog { x: Var, lo: f64, hi: f64 },
    Softmax(Var),
    LogSoftmax { x: Var, mask: Option<Vec<bool>> },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MaxRows { x: Var, argmax: Vec<usize> },
    MeanRows(Var),
    Sum(Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Pick { x: Var, cols: Vec<usize> },
    /// One LSTM step; `gates` caches `[i, f, g, o]` after activation.
    LstmStep { xw: Var, t: usize, state: Var, wh: Var, gates: Vec<f64> },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// A recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

/// Gradients produced by [`Tape::backward`]. Only leaf nodes (constants and
/// parameters) keep their gradient once the pass is done.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn shape(m: &Matrix) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(shape(m), (1, 1));
        m[[0, 0]]
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Bind a named parameter from `store`. Repeated calls with the same name
    /// return the same node, so gradients from every use accumulate there.
    ///
    /// Panics if `store` has no such parameter; parameter names are fixed by
    /// the model code, so a miss is a programming error.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.param_index.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
            .clone();
        let v = self.push(value, Op::Leaf);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        v
    }

    /// Parameters bound so far, in binding order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(shape(self.value(a)), shape(self.value(b)), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(shape(self.value(a)), shape(self.value(b)), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(shape(self.value(a)), shape(self.value(b)), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1 x c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a row vector");
        assert_eq!(r.ncols(), self.value(a).ncols(), "add_row width mismatch");
        let v = self.value(a) + r;
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` element-wise by the `1 x c` row `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "mul_row expects a row vector");
        assert_eq!(r.ncols(), self.value(a).ncols(), "mul_row width mismatch");
        let v = self.value(a) * r;
        self.push(v, Op::MulRow(a, row))
    }

    /// `scale * a + shift`, element-wise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// `ln(clamp(a, lo, hi))`; the gradient is zero where clamping is active.
    pub fn clamp_log(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi).ln());
        self.push(v, Op::ClampLog { x: a, lo, hi })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::Softmax(a))
    }

    /// Row-wise log-softmax. With a mask (row-major, `true` = excluded),
    /// excluded entries take no part in the normaliser and output `0`.
    pub fn log_softmax(&mut self, a: Var, mask: Option<Vec<bool>>) -> Var {
        let x = self.value(a);
        let (rows, cols) = shape(x);
        if let Some(m) = &mask {
            assert_eq!(m.len(), rows * cols, "mask size mismatch");
        }
        let excluded = |i: usize, j: usize| mask.as_ref().is_some_and(|m| m[i * cols + j]);
        let mut v = Array2::zeros((rows, cols));
        for i in 0..rows {
            let mut max = f64::NEG_INFINITY;
            for j in 0..cols {
                if !excluded(i, j) {
                    max = max.max(x[[i, j]]);
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..cols {
                if !excluded(i, j) {
                    sum += (x[[i, j]] - max).exp();
                }
            }
            let lse = max + sum.ln();
            for j in 0..cols {
                if !excluded(i, j) {
                    v[[i, j]] = x[[i, j]] - lse;
                }
            }
        }
        self.push(v, Op::LogSoftmax { x: a, mask })
    }

    /// Row-wise standardisation `(x - mean) / sqrt(var + eps)` with no affine
    /// part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut v = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in v.rows_mut() {
            let mean = row.sum() / cols;
            row.mapv_inplace(|x| x - mean);
            let var = row.iter().map(|x| x * x).sum::<f64>() / cols;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| x * is);
            inv_std.push(is);
        }
        self.push(v, Op::LayerNorm { x: a, inv_std })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Rows of `a` at `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        for &i in idx {
            assert!(i < x.nrows(), "gather index {i} out of range {}", x.nrows());
        }
        let v = x.select(Axis(0), idx);
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows width mismatch");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols height mismatch");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    /// One LSTM step. `xw` holds the precomputed input projections (`n x 4H`,
    /// gate order input, forget, cell, output), `state` is the `1 x 2H` row
    /// `[h, c]` and `wh` the `H x 4H` recurrent weights. Returns the next
    /// `[h, c]`.
    pub fn lstm_step(&mut self, xw: Var, t: usize, state: Var, wh: Var) -> Var {
        let hidden = self.value(wh).nrows();
        let st = self.value(state);
        assert_eq!(shape(st), (1, 2 * hidden), "lstm state must be 1 x 2H");
        assert_eq!(self.value(xw).ncols(), 4 * hidden, "lstm projections must be n x 4H");
        let h = st.slice(s![.., ..hidden]);
        let z = &self.value(xw).slice(s![t..t + 1, ..]) + &h.dot(self.value(wh));
        let mut gates = vec![0.0; 4 * hidden];
        let mut out = Array2::zeros((1, 2 * hidden));
        for j in 0..hidden {
            let i = sigmoid(z[[0, j]]);
            let f = sigmoid(z[[0, hidden + j]]);
            let g = z[[0, 2 * hidden + j]].tanh();
            let o = sigmoid(z[[0, 3 * hidden + j]]);
            let c = f * st[[0, hidden + j]] + i * g;
            out[[0, j]] = o * c.tanh();
            out[[0, hidden + j]] = c;
            gates[j] = i;
            gates[hidden + j] = f;
            gates[2 * hidden + j] = g;
            gates[3 * hidden + j] = o;
        }
        self.push(out, Op::LstmStep { xw, t, state, wh, gates })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Coordinate-wise maximum over rows, giving a `1 x c` row. Ties resolve
    /// to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.nrows() > 0, "max over zero rows");
        let mut argmax = vec![0usize; x.ncols()];
        let mut v = x.row(0).to_owned().insert_axis(Axis(0));
        for (i, row) in x.rows().into_iter().enumerate().skip(1) {
            for (j, &val) in row.iter().enumerate() {
                if val > v[[0, j]] {
                    v[[0, j]] = val;
                    argmax[j] = i;
                }
            }
        }
        self.push(v, Op::MaxRows { x: a, argmax })
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.nrows() > 0, "mean over zero rows");
        let v = x.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean of all entries.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let mut norms = Vec::with_capacity(v.nrows());
        for mut row in v.rows_mut() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.mapv_inplace(|x| x / n);
            norms.push(n);
        }
        self.push(v, Op::L2NormalizeRows { x: a, norms })
    }

    /// Picks one column per row, giving an `n x 1` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(cols.len(), x.nrows(), "pick needs one column per row");
        let v = Array2::from_shape_fn((x.nrows(), 1), |(i, _)| x[[i, cols[i]]]);
        self.push(v, Op::Pick { x: a, cols: cols.to_vec() })
    }

    /// Element-wise multiplication by a fixed mask (dropout and the like).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(shape(self.value(loss)), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        fn acc_region(grads: &mut [Option<Matrix>], v: Var, dim: ndarray::Ix2, f: impl FnOnce(&mut Matrix)) {
            let slot = grads[v.0].get_or_insert_with(|| Array2::zeros(dim));
            f(slot);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, r) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*r);
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::Affine(a, scale) => {
                    acc(&mut grads, *a, g.mapv(|x| x * scale));
                }
                Op::Gelu(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| *gi *= gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gi, &y| *gi *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gi, &y| *gi *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::ClampLog { x, lo, hi } => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(self.value(*x)).for_each(|gi, &xv| {
                        *gi = if xv > *lo && xv < *hi { *gi / xv } else { 0.0 };
                    });
                    acc(&mut grads, *x, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|j| g[[i, j]] * y[[i, j]]).sum();
                        for j in 0..y.ncols() {
                            ga[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmax { x, mask } => {
                    let y = &node.value;
                    let cols = y.ncols();
                    let excluded = |i: usize, j: usize| mask.as_ref().is_some_and(|m| m[i * cols + j]);
                    let mut ga = Array2::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let total: f64 = (0..cols).filter(|&j| !excluded(i, j)).map(|j| g[[i, j]]).sum();
                        for j in 0..cols {
                            if !excluded(i, j) {
                                ga[[i, j]] = g[[i, j]] - y[[i, j]].exp() * total;
                            }
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let n = y.ncols() as f64;
                    let mut ga = Array2::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let gr = g.row(i);
                        let yr = y.row(i);
                        let mean_g = gr.sum() / n;
                        let mean_gy = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..y.ncols() {
                            ga[[i, j]] = inv_std[i] * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(i);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![off..off + n, ..]).to_owned());
                        off += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., off..off + n]).to_owned());
                        off += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let dim = self.value(*a).raw_dim();
                    acc_region(&mut grads, *a, dim, |m| {
                        let mut r = m.slice_mut(s![*start..*start + g.nrows(), ..]);
                        r += &g;
                    });
                }
                Op::SliceCols(a, start) => {
                    let dim = self.value(*a).raw_dim();
                    acc_region(&mut grads, *a, dim, |m| {
                        let mut r = m.slice_mut(s![.., *start..*start + g.ncols()]);
                        r += &g;
                    });
                }
                Op::LstmStep { xw, t, state, wh, gates } => {
                    let hidden = gates.len() / 4;
                    let st = self.value(*state);
                    let c_next = node.value.slice(s![.., hidden..]);
                    let mut dz = Array2::zeros((1, 4 * hidden));
                    let mut gstate = Array2::zeros((1, 2 * hidden));
                    for j in 0..hidden {
                        let (i, f, gg, o) = (gates[j], gates[hidden + j], gates[2 * hidden + j], gates[3 * hidden + j]);
                        let tc = c_next[[0, j]].tanh();
                        let dh = g[[0, j]];
                        let dc = g[[0, hidden + j]] + dh * o * (1.0 - tc * tc);
                        dz[[0, j]] = dc * gg * i * (1.0 - i);
                        dz[[0, hidden + j]] = dc * st[[0, hidden + j]] * f * (1.0 - f);
                        dz[[0, 2 * hidden + j]] = dc * i * (1.0 - gg * gg);
                        dz[[0, 3 * hidden + j]] = dh * tc * o * (1.0 - o);
                        gstate[[0, hidden + j]] = dc * f;
                    }
                    let dh_prev = dz.dot(&self.value(*wh).t());
                    gstate.slice_mut(s![.., ..hidden]).assign(&dh_prev);
                    let gwh = st.slice(s![.., ..hidden]).t().dot(&dz);
                    let dim = self.value(*xw).raw_dim();
                    acc_region(&mut grads, *xw, dim, |m| {
                        let mut r = m.slice_mut(s![*t..*t + 1, ..]);
                        r += &dz;
                    });
                    acc(&mut grads, *wh, gwh);
                    acc(&mut grads, *state, gstate);
                }
                Op::MaxRows { x, argmax } => {
                    let mut ga = Array2::zeros(self.value(*x).raw_dim());
                    for (j, &i) in argmax.iter().enumerate() {
                        ga[[i, j]] += g[[0, j]];
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = shape(self.value(*a));
                    let inv = 1.0 / rows as f64;
                    let ga = Array2::from_shape_fn((rows, cols), |(_, j)| g[[0, j]] * inv);
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|j| g[[i, j]] * y[[i, j]]).sum();
                        for j in 0..y.ncols() {
                            ga[[i, j]] = (g[[i, j]] - y[[i, j]] * dot) / norms[i];
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::Pick { x, cols } => {
                    let mut ga = Array2::zeros(self.value(*x).raw_dim());
                    for (i, &c) in cols.iter().enumerate() {
                        ga[[i, c]] += g[[i, 0]];
                    }
                    acc(&mut grads, *x, ga);
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }

    /// Gradients of every bound parameter, keyed by name. Parameters that the
    /// loss does not depend on get zero matrices.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(String, Matrix)> {
        self.params
            .iter()
            .map(|(name, v)| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(self.value(*v).raw_dim()));
                (name.clone(), g)
            })
            .collect()
    }
}
