//! Shared test oracles: central finite differences and toy fixtures.
#![allow(dead_code)]

use autodiff::{Matrix, ParamStore, Tape};
use rayon::prelude::*;
use trialnli::corpus::{encode_pair, PremiseView, SentenceOrigin, TokenSequence, Tokenizer, TrialSide, Section};
use trialnli::encoder::{EncoderConfig, EncoderParams};
use trialnli::mgnet::{mgnet_on_tape, MGNetConfig, MGNetParams, SentenceEncoderKind as S, TokenEncoderKind as T};
use trialnli::nn::{Dropout, Scope};
use trialnli::objectives::{
    contrastive_on_tape, entailment_loss_on_tape, multitask_on_tape, retrieval_loss_on_tape, LossConfig,
};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that entries whose true
/// gradient is (numerically) zero compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(REL_FLOOR)
}

#[derive(Debug)]
pub struct Worst {
    pub name: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
    pub checked: usize,
}

/// Compares the analytic gradient of `f` against central differences for
/// every entry of every array in `store` (arrays missing from the analytic
/// result count as zero gradient). `f(store, true)` must return the loss and
/// its parameter gradients; `f(store, false)` may skip the gradients.
pub fn check_gradients<F>(store: &ParamStore, f: F) -> Worst
where
    F: Fn(&ParamStore, bool) -> (f64, Vec<(String, Matrix)>) + Sync,
{
    let (_, grads) = f(store, true);
    let entries: Vec<(String, usize, usize)> = store
        .iter()
        .flat_map(|(name, v)| v.indexed_iter().map(move |((i, j), _)| (name.clone(), i, j)))
        .collect();
    let numeric: Vec<f64> = entries
        .par_iter()
        .map_init(
            || store.clone(),
            |probe, (name, i, j)| {
                let x = store.get(name).unwrap()[[*i, *j]];
                probe.get_mut(name).unwrap()[[*i, *j]] = x + FD_STEP;
                let up = f(probe, false).0;
                probe.get_mut(name).unwrap()[[*i, *j]] = x - FD_STEP;
                let down = f(probe, false).0;
                probe.get_mut(name).unwrap()[[*i, *j]] = x;
                (up - down) / (2.0 * FD_STEP)
            },
        )
        .collect();
    let mut worst = Worst { name: String::new(), index: (0, 0), analytic: 0.0, numeric: 0.0, rel: -1.0, checked: entries.len() };
    for ((name, i, j), n) in entries.into_iter().zip(numeric) {
        let a = grads.iter().find(|(g, _)| *g == name).map_or(0.0, |(_, g)| g[[i, j]]);
        let rel = rel_err(a, n);
        if rel > worst.rel {
            worst = Worst { name, index: (i, j), analytic: a, numeric: n, rel, checked: worst.checked };
        }
    }
    worst
}

pub fn view(sentences: &[&str]) -> PremiseView {
    PremiseView {
        sentences: sentences.iter().map(|s| s.to_string()).collect(),
        origins: (0..sentences.len())
            .map(|i| SentenceOrigin {
                trial_id: "T".into(),
                side: TrialSide::Primary,
                section: Section::Results,
                original_index: Some(i),
            })
            .collect(),
    }
}

pub fn toy_tokenizer() -> Tokenizer {
    Tokenizer::build(["cohort alpha beta received letrozole tamoxifen and patients responded the trial gives"], 1)
}

/// Hypothesis of 3 tokens against 3 premise sentences: N = 19.
pub fn toy_sequence(tok: &Tokenizer, variant: usize) -> TokenSequence {
    let hyps = ["cohort alpha responded", "the trial gives", "beta received tamoxifen"];
    let premise = view(&[
        "cohort alpha received letrozole",
        "patients responded and the trial",
        "beta received tamoxifen .",
    ]);
    encode_pair(hyps[variant % hyps.len()], &premise, tok, 24).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub enum Loss {
    A,
    B,
    Mul,
    Cl,
}

pub fn mgnet_setup(s: S, t: T) -> (EncoderConfig, MGNetConfig, ParamStore) {
    let tok = toy_tokenizer();
    let enc_cfg = EncoderConfig { d: 8, heads: 2, ff: 16, layers: 2, ..EncoderConfig::toy(tok.vocab_size(), 24) };
    let enc = EncoderParams::init(enc_cfg.clone(), 11).unwrap();
    let mut mg_cfg = MGNetConfig::new(s, t, 8);
    mg_cfg.sentence_heads = 2;
    let mg = MGNetParams::init(mg_cfg.clone(), 12).unwrap();
    let mut store = ParamStore::new();
    store.absorb("enc.", enc.store);
    store.absorb("mg.", mg.store);
    (enc_cfg, mg_cfg, store)
}

pub fn mgnet_loss(enc_cfg: &EncoderConfig, mg_cfg: &MGNetConfig, kind: Loss) -> impl Fn(&ParamStore, bool) -> (f64, Vec<(String, Matrix)>) + Sync {
    let tok = toy_tokenizer();
    let seqs: Vec<_> = (0..3).map(|v| toy_sequence(&tok, v)).collect();
    let enc_cfg = enc_cfg.clone();
    let mg_cfg = mg_cfg.clone();
    move |store: &ParamStore, with_grad: bool| {
        let mut tape = Tape::new();
        let batch = if matches!(kind, Loss::Cl) { 3 } else { 1 };
        let mut globals = Vec::new();
        let mut probs = Vec::new();
        let mut losses = Vec::new();
        for seq in &seqs[..batch] {
            let v = mgnet_on_tape(
                &mut tape,
                Scope::new(store, "enc."),
                &enc_cfg,
                Scope::new(store, "mg."),
                &mg_cfg,
                seq,
                &[],
                true,
                &mut Dropout::eval(),
            )
            .unwrap();
            let la = entailment_loss_on_tape(&mut tape, v.p_a, &[1]);
            let lb = retrieval_loss_on_tape(&mut tape, v.p_b.unwrap(), &[1, 0, 1]);
            globals.push(v.global);
            probs.push(v.p_a);
            losses.push(match kind {
                Loss::A => la,
                Loss::B => lb,
                Loss::Mul => multitask_on_tape(&mut tape, la, lb, &LossConfig { lambda: 0.5, ..Default::default() }),
                Loss::Cl => la,
            });
        }
        let loss = if let Loss::Cl = kind {
            let g = tape.concat_rows(&globals);
            let p = tape.concat_rows(&probs);
            contrastive_on_tape(&mut tape, g, p, &[1, 1, 0], &LossConfig::default()).unwrap()
        } else {
            losses[0]
        };
        if !with_grad {
            return (tape.scalar(loss), Vec::new());
        }
        let grads = tape.backward(loss);
        (tape.scalar(loss), tape.param_grads(&grads))
    }
}

/// Worst analytic-vs-numeric gradient mismatch of a toy MGNet under `kind`.
pub fn mgnet_worst(s: S, t: T, kind: Loss) -> Worst {
    let (enc_cfg, mg_cfg, store) = mgnet_setup(s, t);
    check_gradients(&store, mgnet_loss(&enc_cfg, &mg_cfg, kind))
}
