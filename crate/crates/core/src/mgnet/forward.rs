use std::ops::Range;

use autodiff::{Matrix, Tape, Var};
use ndarray::Array2;

use super::{MGNetConfig, MGNetParams, Pooling, SentenceEncoderKind, TokenEncoderKind};
use crate::corpus::TokenSequence;
use crate::encoder::{encode_on_tape, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::nn::{self, Dropout, Scope};

/// Pooled sentence rows. `kept` lists the span indices that produced a row
/// (span 0 is the hypothesis); empty spans are skipped.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub rows: Matrix,
    pub kept: Vec<usize>,
}

/// Handles to the interesting nodes of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct MGNetVars {
    pub logits_a: Var,
    /// `1 x 2`: contradiction, entailment.
    pub p_a: Var,
    /// Global representation fed to classifier A.
    pub global: Var,
    /// `k x 1` evidence probabilities for the premise sentences in `scored`.
    pub p_b: Option<Var>,
    /// 0-based premise sentence indices that received an evidence score.
    pub scored: Vec<usize>,
}

/// Eval-mode outputs for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct MGNetOutput {
    pub p_a: [f64; 2],
    /// One score per premise sentence; 0 for markers and truncated sentences.
    pub p_b: Vec<f64>,
    pub scored: Vec<bool>,
    pub truncated: Vec<bool>,
}

fn span_rows(tape: &mut Tape, reps: Var, span: &Range<usize>) -> Var {
    tape.slice_rows(reps, span.start, span.len())
}

pub(crate) fn pool_on_tape(tape: &mut Tape, reps: Var, spans: &[Range<usize>], pooling: Pooling) -> Result<(Var, Vec<usize>)> {
    let kept: Vec<usize> = (0..spans.len()).filter(|&i| !spans[i].is_empty()).collect();
    if kept.is_empty() {
        return Err(Error::Degenerate("every sentence span is empty".into()));
    }
    let rows: Vec<Var> = kept
        .iter()
        .map(|&i| {
            let r = span_rows(tape, reps, &spans[i]);
            match pooling {
                Pooling::Max => tape.max_rows(r),
                Pooling::Mean => tape.mean_rows(r),
            }
        })
        .collect();
    let pooled = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows) };
    Ok((pooled, kept))
}

/// `H^s_i = W1[fwd_i; bwd_i] + b1`, global `W2[fwd_last; bwd_first] + b2`.
pub(crate) fn sentence_bilstm_on_tape(tape: &mut Tape, s: Scope, hs: Var) -> (Var, Var) {
    let fwd = nn::lstm(tape, s, "sent.fwd", hs, false);
    let bwd = nn::lstm(tape, s, "sent.bwd", hs, true);
    let f = tape.concat_rows(&fwd);
    let b = tape.concat_rows(&bwd);
    let both = tape.concat_cols(&[f, b]);
    let h = nn::linear(tape, s, "sent.w1", both);
    let ends = tape.concat_cols(&[fwd[fwd.len() - 1], bwd[0]]);
    let global = nn::linear(tape, s, "sent.w2", ends);
    (h, global)
}

/// Sentence positions are added before the blocks; the global vector is the
/// hypothesis row of the last layer.
pub(crate) fn sentence_transformer_on_tape(
    tape: &mut Tape,
    s: Scope,
    cfg: &MGNetConfig,
    hs: Var,
    dropout: &mut Dropout,
) -> Result<(Var, Var)> {
    let k = tape.value(hs).nrows();
    if k > cfg.max_sentences {
        return Err(Error::Length { len: k, max: cfg.max_sentences });
    }
    let pos = s.bind(tape, "sent.pos");
    let idx: Vec<usize> = (0..k).collect();
    let p = tape.gather_rows(pos, &idx);
    let mut h = tape.add(hs, p);
    for l in 0..cfg.sentence_layers {
        h = nn::transformer_block(tape, s, &format!("sent.layer{l}"), h, cfg.sentence_heads, cfg.ln_eps, dropout);
    }
    let global = tape.slice_rows(h, 0, 1);
    Ok((h, global))
}

/// BiLSTM over the hypothesis rows followed by the sentence rows, projected
/// from `[fwd_last; bwd_first]`.
pub(crate) fn token_bilstm_on_tape(tape: &mut Tape, s: Scope, reps: Var, hyp: &Range<usize>, sent: &Range<usize>) -> Var {
    let a = span_rows(tape, reps, hyp);
    let b = span_rows(tape, reps, sent);
    let x = tape.concat_rows(&[a, b]);
    let fwd = nn::lstm(tape, s, "tok.fwd", x, false);
    let bwd = nn::lstm(tape, s, "tok.bwd", x, true);
    let ends = tape.concat_cols(&[fwd[fwd.len() - 1], bwd[0]]);
    nn::linear(tape, s, "tok.w3", ends)
}

pub(crate) fn token_maxpool_on_tape(tape: &mut Tape, reps: Var, hyp: &Range<usize>, sent: &Range<usize>) -> Var {
    let a = span_rows(tape, reps, hyp);
    let b = span_rows(tape, reps, sent);
    let x = tape.concat_rows(&[a, b]);
    tape.max_rows(x)
}

/// Returns `(logits, probabilities)` of classifier A.
pub(crate) fn classify_a_on_tape(tape: &mut Tape, s: Scope, global: Var) -> (Var, Var) {
    let h = nn::linear(tape, s, "cls_a.1", global);
    let h = tape.gelu(h);
    let logits = nn::linear(tape, s, "cls_a.2", h);
    let p = tape.softmax(logits);
    (logits, p)
}

pub(crate) fn score_b_on_tape(tape: &mut Tape, s: Scope, inputs: Var) -> Var {
    let z = nn::linear(tape, s, "cls_b", inputs);
    tape.sigmoid(z)
}

/// Records the full network on `tape`. `markers` flags premise sentences that
/// must not be scored (may be empty when there are none). Classifier B runs
/// only when `with_evidence` is set.
#[allow(clippy::too_many_arguments)]
pub fn mgnet_on_tape(
    tape: &mut Tape,
    enc_scope: Scope,
    enc_cfg: &EncoderConfig,
    mg_scope: Scope,
    cfg: &MGNetConfig,
    seq: &TokenSequence,
    markers: &[bool],
    with_evidence: bool,
    dropout: &mut Dropout,
) -> Result<MGNetVars> {
    if cfg.d != enc_cfg.d {
        return Err(Error::Config(format!("MGNet width {} does not match encoder width {}", cfg.d, enc_cfg.d)));
    }
    if seq.leading_segments != 1 {
        return Err(Error::Argument("MGNet expects a single hypothesis segment".into()));
    }
    let m = seq.premise_len();
    if !markers.is_empty() && markers.len() != m {
        return Err(Error::Argument(format!("{} marker flags for {m} premise sentences", markers.len())));
    }
    let reps = encode_on_tape(tape, enc_scope, enc_cfg, seq, dropout)?;
    let (pooled, kept) = pool_on_tape(tape, reps, &seq.spans, cfg.pooling)?;
    let pooled = dropout.apply(tape, pooled);

    let (sent_h, global) = match cfg.sentence_encoder {
        SentenceEncoderKind::Bilstm => {
            let (h, g) = sentence_bilstm_on_tape(tape, mg_scope, pooled);
            (Some(h), g)
        }
        SentenceEncoderKind::Transformer => {
            let (h, g) = sentence_transformer_on_tape(tape, mg_scope, cfg, pooled, dropout)?;
            (Some(h), g)
        }
        SentenceEncoderKind::None => (None, tape.slice_rows(pooled, 0, 1)),
    };
    let g = dropout.apply(tape, global);
    let (logits_a, p_a) = classify_a_on_tape(tape, mg_scope, g);

    let scored: Vec<usize> = (0..m)
        .filter(|&i| !seq.truncated[i] && !markers.get(i).copied().unwrap_or(false))
        .collect();
    let mut p_b = None;
    if with_evidence && !scored.is_empty() {
        let mut parts = Vec::with_capacity(2);
        if let Some(h) = sent_h {
            let rows: Vec<usize> = scored
                .iter()
                .map(|&i| kept.iter().position(|&k| k == i + 1).expect("scored sentences are kept"))
                .collect();
            parts.push(tape.gather_rows(h, &rows));
        }
        let hyp = seq.hypothesis_span().clone();
        let token_rows: Option<Vec<Var>> = match cfg.token_encoder {
            TokenEncoderKind::Bilstm => Some(
                scored
                    .iter()
                    .map(|&i| token_bilstm_on_tape(tape, mg_scope, reps, &hyp, &seq.premise_span(i).clone()))
                    .collect(),
            ),
            TokenEncoderKind::Maxpool => Some(
                scored
                    .iter()
                    .map(|&i| token_maxpool_on_tape(tape, reps, &hyp, &seq.premise_span(i).clone()))
                    .collect(),
            ),
            TokenEncoderKind::None => None,
        };
        if let Some(rows) = token_rows {
            parts.push(if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows) });
        }
        let inputs = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts) };
        let inputs = dropout.apply(tape, inputs);
        p_b = Some(score_b_on_tape(tape, mg_scope, inputs));
    }
    Ok(MGNetVars { logits_a, p_a, global, p_b, scored })
}

/// Eval-mode forward pass producing both prediction surfaces.
pub fn mgnet_forward(seq: &TokenSequence, enc: &EncoderParams, mg: &MGNetParams, markers: &[bool]) -> Result<MGNetOutput> {
    let mut tape = Tape::new();
    let vars = mgnet_on_tape(
        &mut tape,
        Scope::new(&enc.store, ""),
        &enc.config,
        Scope::new(&mg.store, ""),
        &mg.config,
        seq,
        markers,
        true,
        &mut Dropout::eval(),
    )?;
    let pa = tape.value(vars.p_a);
    let m = seq.premise_len();
    let mut p_b = vec![0.0; m];
    let mut scored = vec![false; m];
    if let Some(v) = vars.p_b {
        let vals = tape.value(v);
        for (k, &i) in vars.scored.iter().enumerate() {
            p_b[i] = vals[[k, 0]];
            scored[i] = true;
        }
    }
    Ok(MGNetOutput { p_a: [pa[[0, 0]], pa[[0, 1]]], p_b, scored, truncated: seq.truncated.clone() })
}

// ---- standalone component entry points ------------------------------------

fn require_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}

fn require_width(m: &Matrix, d: usize, what: &str) -> Result<()> {
    if m.ncols() == d {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} has width {} but the model width is {d}", m.ncols())))
    }
}

/// Pools every non-empty span of `reps` into one row.
pub fn pool_sentences(reps: &Matrix, spans: &[Range<usize>], pooling: Pooling) -> Result<Pooled> {
    let mut tape = Tape::new();
    let r = tape.constant(reps.clone());
    let (v, kept) = pool_on_tape(&mut tape, r, spans, pooling)?;
    Ok(Pooled { rows: tape.value(v).clone(), kept })
}

/// Returns `(H^s, global)` for the BiLSTM sentence encoder.
pub fn sentence_encode_bilstm(pooled: &Matrix, mg: &MGNetParams) -> Result<(Matrix, Matrix)> {
    if mg.config.sentence_encoder != SentenceEncoderKind::Bilstm {
        return Err(Error::Config("parameters are not for a BiLSTM sentence encoder".into()));
    }
    require_width(pooled, mg.config.d, "pooled representation")?;
    let mut tape = Tape::new();
    let x = tape.constant(pooled.clone());
    let (h, g) = sentence_bilstm_on_tape(&mut tape, Scope::new(&mg.store, ""), x);
    Ok((tape.value(h).clone(), tape.value(g).clone()))
}

/// Returns `(H^s, global)` for the transformer sentence encoder (eval mode).
pub fn sentence_encode_transformer(pooled: &Matrix, mg: &MGNetParams) -> Result<(Matrix, Matrix)> {
    if mg.config.sentence_encoder != SentenceEncoderKind::Transformer {
        return Err(Error::Config("parameters are not for a transformer sentence encoder".into()));
    }
    require_width(pooled, mg.config.d, "pooled representation")?;
    let mut tape = Tape::new();
    let x = tape.constant(pooled.clone());
    let (h, g) =
        sentence_transformer_on_tape(&mut tape, Scope::new(&mg.store, ""), &mg.config, x, &mut Dropout::eval())?;
    Ok((tape.value(h).clone(), tape.value(g).clone()))
}

fn token_spans<'a>(spans: &'a [Range<usize>], i: usize) -> Result<(&'a Range<usize>, &'a Range<usize>)> {
    if i == 0 || i >= spans.len() {
        return Err(Error::Argument(format!("premise sentence index {i} outside 1..={}", spans.len().saturating_sub(1))));
    }
    if spans[0].is_empty() || spans[i].is_empty() {
        return Err(Error::Degenerate(format!("span {i} or the hypothesis span is empty")));
    }
    Ok((&spans[0], &spans[i]))
}

/// Token-level vector for premise sentence `i` (1-based; span 0 is the
/// hypothesis).
pub fn token_encode_bilstm(reps: &Matrix, spans: &[Range<usize>], i: usize, mg: &MGNetParams) -> Result<Matrix> {
    if mg.config.token_encoder != TokenEncoderKind::Bilstm {
        return Err(Error::Config("parameters are not for a BiLSTM token encoder".into()));
    }
    require_width(reps, mg.config.d, "token representations")?;
    let (hyp, sent) = token_spans(spans, i)?;
    let mut tape = Tape::new();
    let r = tape.constant(reps.clone());
    let v = token_bilstm_on_tape(&mut tape, Scope::new(&mg.store, ""), r, hyp, sent);
    Ok(tape.value(v).clone())
}

/// Coordinate-wise max over the hypothesis rows and sentence `i`'s rows.
pub fn token_encode_maxpool(reps: &Matrix, spans: &[Range<usize>], i: usize) -> Result<Matrix> {
    let (hyp, sent) = token_spans(spans, i)?;
    let mut tape = Tape::new();
    let r = tape.constant(reps.clone());
    let v = token_maxpool_on_tape(&mut tape, r, hyp, sent);
    Ok(tape.value(v).clone())
}

pub fn classify_entailment(global: &Matrix, mg: &MGNetParams) -> Result<[f64; 2]> {
    require_finite(global, "global representation")?;
    require_width(global, mg.config.d, "global representation")?;
    let mut tape = Tape::new();
    let g = tape.constant(global.clone());
    let (_, p) = classify_a_on_tape(&mut tape, Scope::new(&mg.store, ""), g);
    let p = tape.value(p);
    Ok([p[[0, 0]], p[[0, 1]]])
}

/// Evidence probability from one sentence's sentence-level and token-level
/// vectors. Pass `None` for a granularity the configuration disables.
pub fn score_evidence(sentence: Option<&Matrix>, token: Option<&Matrix>, mg: &MGNetParams) -> Result<f64> {
    let mut cols: Vec<&Matrix> = Vec::new();
    if mg.config.sentence_encoder != SentenceEncoderKind::None {
        cols.push(sentence.ok_or_else(|| Error::Argument("sentence-level vector required".into()))?);
    }
    if mg.config.token_encoder != TokenEncoderKind::None {
        cols.push(token.ok_or_else(|| Error::Argument("token-level vector required".into()))?);
    }
    for c in &cols {
        require_finite(c, "evidence input")?;
        require_width(c, mg.config.d, "evidence input")?;
    }
    let views: Vec<_> = cols.iter().map(|c| c.view()).collect();
    let x: Array2<f64> = ndarray::concatenate(ndarray::Axis(1), &views).expect("row vectors");
    let mut tape = Tape::new();
    let x = tape.constant(x);
    let p = score_b_on_tape(&mut tape, Scope::new(&mg.store, ""), x);
    Ok(tape.value(p)[[0, 0]])
}
