//! Per-checkpoint prediction sets, soft ensembling, threshold decisions and
//! the prediction file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Evidence scores for one instance, indexed like the referenced sections.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceScores {
    pub primary: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<Vec<f64>>,
}

/// Raw probabilities produced by one checkpoint, or the average of several.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// `[p(contradiction), p(entailment)]` per uuid.
    #[serde(rename = "taskA", default)]
    pub task_a: BTreeMap<String, [f64; 2]>,
    #[serde(rename = "taskB", default)]
    pub task_b: BTreeMap<String, EvidenceScores>,
    /// Number of checkpoints averaged into this set.
    #[serde(default = "one")]
    pub contributors: usize,
}

fn one() -> usize {
    1
}

impl PredictionSet {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Mean that is exact for equal inputs, independent of input order and
/// never outside `[min, max]`.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let lo = values[0];
    let hi = values[values.len() - 1];
    let excess: f64 = values.iter().map(|v| v - lo).sum();
    (lo + excess / values.len() as f64).clamp(lo, hi)
}

fn average_vectors(key: &str, vectors: &[&Vec<f64>]) -> Result<Vec<f64>> {
    let len = vectors[0].len();
    if vectors.iter().any(|v| v.len() != len) {
        return Err(Error::Alignment { key: key.to_string() });
    }
    Ok((0..len)
        .map(|i| {
            let mut col: Vec<f64> = vectors.iter().map(|v| v[i]).collect();
            stable_mean(&mut col)
        })
        .collect())
}

/// Averages prediction sets key by key. Every set must cover the same
/// instances and sentence counts.
pub fn soft_ensemble(sets: &[PredictionSet]) -> Result<PredictionSet> {
    let Some(first) = sets.first() else {
        return Err(Error::Argument("nothing to ensemble".into()));
    };
    for s in &sets[1..] {
        for key in s.task_a.keys().chain(first.task_a.keys()) {
            if !(s.task_a.contains_key(key) && first.task_a.contains_key(key)) {
                return Err(Error::Alignment { key: key.clone() });
            }
        }
        for key in s.task_b.keys().chain(first.task_b.keys()) {
            if !(s.task_b.contains_key(key) && first.task_b.contains_key(key)) {
                return Err(Error::Alignment { key: key.clone() });
            }
        }
    }
    let mut out = PredictionSet { contributors: sets.iter().map(|s| s.contributors.max(1)).sum(), ..Default::default() };
    for key in first.task_a.keys() {
        let p = [0, 1].map(|c| {
            let mut col: Vec<f64> = sets.iter().map(|s| s.task_a[key][c]).collect();
            stable_mean(&mut col)
        });
        out.task_a.insert(key.clone(), p);
    }
    for key in first.task_b.keys() {
        let primaries: Vec<&Vec<f64>> = sets.iter().map(|s| &s.task_b[key].primary).collect();
        let primary = average_vectors(key, &primaries)?;
        let secondaries: Vec<Option<&Vec<f64>>> = sets.iter().map(|s| s.task_b[key].secondary.as_ref()).collect();
        let secondary = if secondaries.iter().all(Option::is_none) {
            None
        } else if secondaries.iter().all(Option::is_some) {
            let v: Vec<&Vec<f64>> = secondaries.into_iter().flatten().collect();
            Some(average_vectors(&format!("{key}/secondary"), &v)?)
        } else {
            return Err(Error::Alignment { key: format!("{key}/secondary") });
        };
        out.task_b.insert(key.clone(), EvidenceScores { primary, secondary });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionThresholds {
    pub eta_a: f64,
    pub eta_b: f64,
}

impl Default for DecisionThresholds {
    fn default() -> Self {
        Self { eta_a: 0.57, eta_b: 0.53 }
    }
}

impl DecisionThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_a", self.eta_a), ("eta_b", self.eta_b)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} = {v} must lie strictly between 0 and 1")));
            }
        }
        Ok(())
    }
}

/// Entailment iff `p[1] > eta_a`.
pub fn decide_task_a(p: [f64; 2], eta_a: f64) -> Label {
    if p[1] > eta_a {
        Label::Entailment
    } else {
        Label::Contradiction
    }
}

/// Indices with score strictly above `eta_b`.
pub fn decide_task_b(scores: &[f64], eta_b: f64) -> Vec<usize> {
    (0..scores.len()).filter(|&i| scores[i] > eta_b).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskAEntry {
    pub p: [f64; 2],
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEntry {
    pub scores: Vec<f64>,
    pub selected: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBEntry {
    pub primary: EvidenceEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<EvidenceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub checkpoints: Vec<String>,
    pub thresholds: DecisionThresholds,
    pub joint: bool,
}

/// The system output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    #[serde(rename = "taskA", default)]
    pub task_a: BTreeMap<String, TaskAEntry>,
    #[serde(rename = "taskB", default)]
    pub task_b: BTreeMap<String, TaskBEntry>,
    pub meta: PredictionMeta,
}

impl PredictionFile {
    /// Applies the thresholds to (possibly rectified) probabilities.
    pub fn decide(set: &PredictionSet, meta: PredictionMeta) -> Self {
        let t = meta.thresholds;
        let task_a = set
            .task_a
            .iter()
            .map(|(k, &p)| (k.clone(), TaskAEntry { p, label: decide_task_a(p, t.eta_a) }))
            .collect();
        let entry = |s: &Vec<f64>| EvidenceEntry { scores: s.clone(), selected: decide_task_b(s, t.eta_b) };
        let task_b = set
            .task_b
            .iter()
            .map(|(k, e)| (k.clone(), TaskBEntry { primary: entry(&e.primary), secondary: e.secondary.as_ref().map(entry) }))
            .collect();
        Self { task_a, task_b, meta }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_a(entries: &[(&str, [f64; 2])]) -> PredictionSet {
        PredictionSet {
            task_a: entries.iter().map(|(k, p)| (k.to_string(), *p)).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn mean_of_two() {
        let out = soft_ensemble(&[set_a(&[("x", [0.2, 0.8])]), set_a(&[("x", [0.4, 0.6])])]).unwrap();
        let p = out.task_a["x"];
        assert!((p[0] - 0.3).abs() < 1e-15 && (p[1] - 0.7).abs() < 1e-15);
        assert_eq!(out.contributors, 2);
    }

    #[test]
    fn identical_contributors_are_identity() {
        let s = set_a(&[("x", [0.1, 0.9]), ("y", [0.7, 0.3])]);
        let out = soft_ensemble(&vec![s.clone(); 7]).unwrap();
        assert_eq!(out.task_a, s.task_a);
    }

    #[test]
    fn order_does_not_matter() {
        let a = set_a(&[("x", [0.13, 0.87])]);
        let b = set_a(&[("x", [0.41, 0.59])]);
        let c = set_a(&[("x", [0.77, 0.23])]);
        let one = soft_ensemble(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let two = soft_ensemble(&[c, a, b]).unwrap();
        assert_eq!(one.task_a, two.task_a);
    }

    #[test]
    fn misaligned_keys_are_named() {
        let err = soft_ensemble(&[set_a(&[("x", [0.5, 0.5])]), set_a(&[("y", [0.5, 0.5])])]).unwrap_err();
        assert!(matches!(err, Error::Alignment { .. }));
        let mut a = PredictionSet::default();
        a.task_b.insert("u".into(), EvidenceScores { primary: vec![0.1, 0.2], secondary: None });
        let mut b = a.clone();
        b.task_b.get_mut("u").unwrap().primary.push(0.3);
        assert!(soft_ensemble(&[a, b]).unwrap_err().to_string().contains('u'));
    }

    #[test]
    fn thresholds_are_strict() {
        assert_eq!(decide_task_a([0.43, 0.57], 0.57), Label::Contradiction);
        assert_eq!(decide_task_a([0.0, 1.0], 0.57), Label::Entailment);
        assert_eq!(decide_task_a([0.99, 0.01], 0.0), Label::Entailment);
        assert_eq!(decide_task_b(&[0.54, 0.53, 0.1], 0.53), vec![0]);
        assert!(decide_task_b(&[0.0; 4], 0.53).is_empty());
        assert_eq!(decide_task_b(&[1.0; 3], 0.53), vec![0, 1, 2]);
    }

    #[test]
    fn file_round_trip() {
        let mut s = set_a(&[("x", [0.2, 0.8])]);
        s.task_b.insert("x".into(), EvidenceScores { primary: vec![0.9, 0.1], secondary: Some(vec![0.6]) });
        let meta = PredictionMeta { checkpoints: vec!["a".into()], thresholds: DecisionThresholds::default(), joint: false };
        let f = PredictionFile::decide(&s, meta);
        assert_eq!(f.task_b["x"].primary.selected, vec![0]);
        assert_eq!(f.task_b["x"].secondary.as_ref().unwrap().selected, vec![0]);
        let json = serde_json::to_value(&f).unwrap();
        assert!(json["taskA"]["x"]["p"].is_array());
        assert_eq!(json["meta"]["joint"], false);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.json");
        f.save(&p).unwrap();
        assert_eq!(PredictionFile::load(&p).unwrap(), f);
    }
}
