//! Micro-averaged precision, recall and F1 for both tasks, globally and per
//! section.
//!
//! Task A counts one decision per hypothesis with Entailment as the positive
//! class. Task B counts one decision per premise sentence, pooled over all
//! premises and over both trials of comparison instances.
//!
//! Zero denominators give zero: precision is 0 without positive
//! predictions, recall is 0 without positive gold items, F1 is 0 when both
//! are 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label, Section, TrialSide};
use crate::ensemble::PredictionFile;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn scores(&self) -> Scores {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Scores { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_section: Option<BTreeMap<Section, Scores>>,
}

impl MetricReport {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let s = counts.scores();
        Self { precision: s.precision, recall: s.recall, f1: s.f1, counts, per_section: None }
    }
}

/// Micro P/R/F1 over keyed binary decisions. Both maps must have the same
/// key set.
pub fn micro_prf<K: Ord + std::fmt::Debug>(pred: &BTreeMap<K, bool>, gold: &BTreeMap<K, bool>) -> Result<MetricReport> {
    let mut counts = ConfusionCounts::default();
    for (k, &g) in gold {
        let &p = pred.get(k).ok_or_else(|| Error::Alignment { key: format!("{k:?}") })?;
        counts.record(p, g);
    }
    if let Some(k) = pred.keys().find(|k| !gold.contains_key(*k)) {
        return Err(Error::Alignment { key: format!("{k:?}") });
    }
    Ok(MetricReport::from_counts(counts))
}

/// Key of one Task B decision.
pub type SentenceKey = (String, TrialSide, usize);

/// Predictions for instances the gold file does not contain are an
/// alignment error; predictions for unlabelled gold instances are ignored.
fn check_known<'a>(keys: impl Iterator<Item = &'a String>, gold: &Dataset) -> Result<()> {
    let known: BTreeSet<&str> = gold.instances.iter().map(|i| i.uuid.as_str()).collect();
    for k in keys {
        if !known.contains(k.as_str()) {
            return Err(Error::Alignment { key: k.clone() });
        }
    }
    Ok(())
}

/// Task A decisions for every labelled instance in `gold` (missing
/// predictions are an alignment error).
pub fn task_a_decisions(pred: &PredictionFile, gold: &Dataset) -> Result<(BTreeMap<String, bool>, BTreeMap<String, bool>)> {
    let mut p = BTreeMap::new();
    let mut g = BTreeMap::new();
    for inst in &gold.instances {
        let Some(label) = inst.label else { continue };
        let entry = pred.task_a.get(&inst.uuid).ok_or_else(|| Error::Alignment { key: inst.uuid.clone() })?;
        p.insert(inst.uuid.clone(), entry.label == Label::Entailment);
        g.insert(inst.uuid.clone(), label == Label::Entailment);
    }
    check_known(pred.task_a.keys(), gold)?;
    Ok((p, g))
}

/// Task B decisions for every instance in `gold` carrying evidence.
pub fn task_b_decisions(
    pred: &PredictionFile,
    gold: &Dataset,
) -> Result<(BTreeMap<SentenceKey, bool>, BTreeMap<SentenceKey, bool>)> {
    let mut p = BTreeMap::new();
    let mut g = BTreeMap::new();
    for inst in &gold.instances {
        if inst.primary_evidence.is_none() {
            continue;
        }
        let entry = pred.task_b.get(&inst.uuid).ok_or_else(|| Error::Alignment { key: inst.uuid.clone() })?;
        for &side in inst.sides() {
            let trial = gold
                .trials
                .get(inst.trial_id(side).expect("side present"))
                .ok_or_else(|| Error::UnknownTrial { uuid: inst.uuid.clone(), trial_id: inst.trial_id(side).unwrap_or_default().to_string() })?;
            let m = trial.section(inst.section).len();
            let ev = inst.evidence(side).unwrap_or(&[]);
            let side_pred = match side {
                TrialSide::Primary => Some(&entry.primary),
                TrialSide::Secondary => entry.secondary.as_ref(),
            }
            .ok_or_else(|| Error::Alignment { key: format!("{}/{side:?}", inst.uuid) })?;
            if side_pred.scores.len() != m {
                return Err(Error::Alignment { key: format!("{}/{side:?} ({} scores for {m} sentences)", inst.uuid, side_pred.scores.len()) });
            }
            for i in 0..m {
                let key = (inst.uuid.clone(), side, i);
                p.insert(key.clone(), side_pred.selected.contains(&i));
                g.insert(key, ev.contains(&i));
            }
        }
    }
    check_known(pred.task_b.keys(), gold)?;
    Ok((p, g))
}

/// Global report plus one entry per section. The section of a decision is
/// the section of its instance (the first key component).
pub fn per_section_report<K: Ord + Clone + std::fmt::Debug>(
    pred: &BTreeMap<K, bool>,
    gold: &BTreeMap<K, bool>,
    section_of: impl Fn(&K) -> Option<Section>,
) -> Result<MetricReport> {
    let mut report = micro_prf(pred, gold)?;
    let mut by_section: BTreeMap<Section, ConfusionCounts> = BTreeMap::new();
    for (k, &g) in gold {
        let s = section_of(k).ok_or_else(|| Error::Validation(format!("no section for decision {k:?}")))?;
        by_section.entry(s).or_default().record(pred[k], g);
    }
    report.per_section = Some(by_section.into_iter().map(|(s, c)| (s, c.scores())).collect());
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(rename = "taskA", skip_serializing_if = "Option::is_none")]
    pub task_a: Option<MetricReport>,
    #[serde(rename = "taskB", skip_serializing_if = "Option::is_none")]
    pub task_b: Option<MetricReport>,
}

/// Scores a prediction file against a labelled dataset. A task is reported
/// when the prediction file contains entries for it; a file with neither is
/// an alignment error.
pub fn evaluate_predictions(pred: &PredictionFile, gold: &Dataset) -> Result<EvaluationReport> {
    if pred.task_a.is_empty() && pred.task_b.is_empty() {
        return Err(Error::Alignment { key: "<empty prediction file>".into() });
    }
    let section = |uuid: &str| gold.instance(uuid).map(|i| i.section);
    let mut out = EvaluationReport::default();
    if !pred.task_a.is_empty() {
        let (p, g) = task_a_decisions(pred, gold)?;
        out.task_a = Some(per_section_report(&p, &g, |k: &String| section(k))?);
    }
    if !pred.task_b.is_empty() {
        let (p, g) = task_b_decisions(pred, gold)?;
        out.task_b = Some(per_section_report(&p, &g, |k: &SentenceKey| section(&k.0))?);
    }
    Ok(out)
}

/// Plain-text table: one row per task, columns P, R, F1 and F1 per section.
pub fn render_table(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<8}{:>8}{:>8}{:>8}", "task", "P", "R", "F1");
    for s in Section::ALL {
        let _ = write!(out, "{:>8}", s.abbrev());
    }
    out.push('\n');
    for (name, r) in [("A", &report.task_a), ("B", &report.task_b)] {
        let Some(r) = r else { continue };
        let _ = write!(out, "{name:<8}{:>8.3}{:>8.3}{:>8.3}", r.precision, r.recall, r.f1);
        for s in Section::ALL {
            match r.per_section.as_ref().and_then(|m| m.get(&s)) {
                Some(v) => {
                    let _ = write!(out, "{:>8.3}", v.f1);
                }
                None => {
                    let _ = write!(out, "{:>8}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(items: &[(bool, bool)]) -> (BTreeMap<usize, bool>, BTreeMap<usize, bool>) {
        (
            items.iter().enumerate().map(|(i, p)| (i, p.0)).collect(),
            items.iter().enumerate().map(|(i, p)| (i, p.1)).collect(),
        )
    }

    #[test]
    fn perfect_predictions() {
        let (p, g) = maps(&[(true, true), (false, false), (true, true)]);
        let r = micro_prf(&p, &g).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_thirds_example() {
        let (p, g) = maps(&[(true, true), (true, true), (true, false), (false, true), (false, false)]);
        let r = micro_prf(&p, &g).unwrap();
        assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_), (2, 1, 1));
        for v in [r.precision, r.recall, r.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_denominators() {
        let (p, g) = maps(&[(false, false), (false, false)]);
        let r = micro_prf(&p, &g).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn misaligned_keys_are_named() {
        let (mut p, g) = maps(&[(true, true)]);
        p.insert(7, true);
        let err = micro_prf(&p, &g).unwrap_err();
        assert!(err.to_string().contains('7'));
        let err = micro_prf(&BTreeMap::new(), &g).unwrap_err();
        assert!(matches!(err, Error::Alignment { .. }));
    }

    #[test]
    fn sections_partition_counts() {
        // decisions 0..3 in Results (perfect), 3..6 in Eligibility (all wrong)
        let (p, g) = maps(&[(true, true), (false, false), (true, true), (true, false), (false, true), (true, false)]);
        let r = per_section_report(&p, &g, |&k| Some(if k < 3 { Section::Results } else { Section::Eligibility })).unwrap();
        let per = r.per_section.unwrap();
        assert_eq!(per[&Section::Results].f1, 1.0);
        assert_eq!(per[&Section::Eligibility].f1, 0.0);
        // pooled: tp=2, fp=2, fn=1 gives P=1/2, R=2/3
        assert!((r.f1 - 4.0 / 7.0).abs() < 1e-15);

        let one = per_section_report(&p, &g, |_| Some(Section::Results)).unwrap();
        assert_eq!(one.per_section.unwrap()[&Section::Results].f1, one.f1);
    }
}
