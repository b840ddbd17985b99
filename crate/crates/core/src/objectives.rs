//! Training objectives: entailment cross-entropy, evidence binary
//! cross-entropy, their weighted sum, and cross-entropy mixed with a
//! supervised contrastive term.
//!
//! The contrastive term over a batch of global vectors `h_i` with labels
//! `y_i` is
//!
//! ```text
//! L_SCL = Σ_i  -1/(N_{y_i} - 1) Σ_{j≠i, y_j = y_i} log( exp(ĥ_i·ĥ_j/τ) / Σ_{k≠i} exp(ĥ_i·ĥ_k/τ) )
//! ```
//!
//! with `ĥ` the L2-normalised vectors and `N_y` the number of batch members
//! labelled `y`. Members without a same-label partner contribute nothing, so
//! a batch with no positive pair has `L_SCL = 0`.
//!
//! Every log takes its argument clamped to `[1e-12, 1 - 1e-12]`.

use autodiff::{Matrix, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the evidence loss in the multitask objective.
    pub lambda: f64,
    /// Share of cross-entropy in the contrastive objective.
    pub gamma: f64,
    /// Temperature of the contrastive term.
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.01, gamma: 0.5, tau: 0.3 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(0.0..=1.0).contains(&self.gamma) || !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "loss settings need lambda >= 0, gamma in [0, 1], tau > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which objective a model trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Entailment cross-entropy only.
    Entailment,
    /// Evidence cross-entropy only.
    Retrieval,
    /// `L_A + λ L_B`.
    Multitask,
    /// `γ mean(L_A) + (1 - γ) L_SCL`.
    Contrastive,
}

// ---- scalar forms ------------------------------------------------------------

fn clog(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS).ln()
}

/// `-(1-y) ln p_1 - y ln p_2`.
pub fn loss_entailment(p: [f64; 2], y: u8) -> f64 {
    if y == 1 {
        -clog(p[1])
    } else {
        -clog(p[0])
    }
}

/// Mean binary cross-entropy over sentences.
pub fn loss_retrieval(p: &[f64], r: &[u8]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Degenerate("evidence loss over zero sentences".into()));
    }
    if p.len() != r.len() {
        return Err(Error::Argument(format!("{} scores for {} labels", p.len(), r.len())));
    }
    let total: f64 = p
        .iter()
        .zip(r)
        .map(|(&pi, &ri)| if ri == 1 { -clog(pi) } else { -clog(1.0 - pi) })
        .sum();
    Ok(total / p.len() as f64)
}

pub fn loss_multitask(l_a: f64, l_b: f64, cfg: &LossConfig) -> f64 {
    l_a + cfg.lambda * l_b
}

/// Contrastive objective over a batch (rows of `globals`).
pub fn loss_contrastive(globals: &Matrix, y: &[u8], p_a: &[[f64; 2]], cfg: &LossConfig) -> Result<f64> {
    let n = globals.nrows();
    if n < 2 {
        return Err(Error::Argument(format!("contrastive loss needs a batch of at least 2, got {n}")));
    }
    if y.len() != n || p_a.len() != n {
        return Err(Error::Argument("batch sizes of representations, labels and predictions differ".into()));
    }
    let ce = p_a.iter().zip(y).map(|(&p, &yi)| loss_entailment(p, yi)).sum::<f64>() / n as f64;
    let mut tape = Tape::new();
    let g = tape.constant(globals.clone());
    let scl = match scl_on_tape(&mut tape, g, y, cfg.tau) {
        Some(v) => tape.scalar(v),
        None => 0.0,
    };
    Ok(cfg.gamma * ce + (1.0 - cfg.gamma) * scl)
}

// ---- tape forms --------------------------------------------------------------

/// Mean cross-entropy of the rows of `p_a` (`n x 2` probabilities).
pub fn entailment_loss_on_tape(tape: &mut Tape, p_a: Var, y: &[u8]) -> Var {
    let cols: Vec<usize> = y.iter().map(|&v| usize::from(v == 1)).collect();
    let picked = tape.pick(p_a, &cols);
    let logs = tape.clamp_log(picked, EPS, 1.0 - EPS);
    let mean = tape.mean(logs);
    tape.scale(mean, -1.0)
}

/// Mean binary cross-entropy of the column `p_b` (`m x 1`).
pub fn retrieval_loss_on_tape(tape: &mut Tape, p_b: Var, r: &[u8]) -> Var {
    let m = r.len();
    assert_eq!(tape.value(p_b).nrows(), m, "score/label length mismatch");
    let pos = Matrix::from_shape_fn((m, 1), |(i, _)| f64::from(r[i]));
    let neg = pos.mapv(|v| 1.0 - v);
    let lp = tape.clamp_log(p_b, EPS, 1.0 - EPS);
    let q = tape.affine(p_b, -1.0, 1.0);
    let lq = tape.clamp_log(q, EPS, 1.0 - EPS);
    let a = tape.mul_const(lp, pos);
    let b = tape.mul_const(lq, neg);
    let s = tape.add(a, b);
    let mean = tape.mean(s);
    tape.scale(mean, -1.0)
}

pub fn multitask_on_tape(tape: &mut Tape, l_a: Var, l_b: Var, cfg: &LossConfig) -> Var {
    let w = tape.scale(l_b, cfg.lambda);
    tape.add(l_a, w)
}

/// Supervised contrastive term over the rows of `globals`; `None` when no
/// two rows share a label.
pub fn scl_on_tape(tape: &mut Tape, globals: Var, y: &[u8], tau: f64) -> Option<Var> {
    let n = y.len();
    let count = |label: u8| y.iter().filter(|&&v| v == label).count();
    let weights = Matrix::from_shape_fn((n, n), |(i, j)| {
        let ni = count(y[i]);
        if i != j && y[i] == y[j] && ni > 1 {
            -1.0 / (ni - 1) as f64
        } else {
            0.0
        }
    });
    if weights.iter().all(|&w| w == 0.0) {
        return None;
    }
    let z = tape.l2_normalize_rows(globals);
    let sim = tape.matmul_t(z, z);
    let sim = tape.scale(sim, 1.0 / tau);
    let mask: Vec<bool> = (0..n * n).map(|k| k / n == k % n).collect();
    let logp = tape.log_softmax(sim, Some(mask));
    let w = tape.mul_const(logp, weights);
    Some(tape.sum(w))
}

pub fn contrastive_on_tape(tape: &mut Tape, globals: Var, p_a: Var, y: &[u8], cfg: &LossConfig) -> Result<Var> {
    if y.len() < 2 {
        return Err(Error::Argument(format!("contrastive loss needs a batch of at least 2, got {}", y.len())));
    }
    let ce = entailment_loss_on_tape(tape, p_a, y);
    let ce = tape.scale(ce, cfg.gamma);
    Ok(match scl_on_tape(tape, globals, y, cfg.tau) {
        Some(scl) => {
            let scl = tape.scale(scl, 1.0 - cfg.gamma);
            tape.add(ce, scl)
        }
        None => ce,
    })
}
