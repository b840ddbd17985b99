//! Training data for the pair network: every contradicting hypothesis pair
//! `(S1, S2)` with paraphrases `(S1', S2')` yields
//! `(S1, S1') same`, `(S2, S2') same`, `(S1, S2) different`,
//! `(S2, S1) different`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_premise, trials_from_raw, trials_to_raw, Dataset, Instance, InstanceKind, PremiseKey, PremiseView, RawTrials,
    TrialRecord,
};
use crate::error::{Error, Result};
use crate::Task;

/// Label-preserving rewriting of a hypothesis.
pub trait Paraphraser: Sync {
    fn paraphrase(&self, text: &str) -> std::result::Result<String, String>;
}

/// Returns its input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityParaphraser;

impl Paraphraser for IdentityParaphraser {
    fn paraphrase(&self, text: &str) -> std::result::Result<String, String> {
        Ok(text.to_string())
    }
}

/// Rule-based phrase substitution tuned to the synthetic templates. Fails
/// when no rule matches.
#[derive(Clone, Debug)]
pub struct SynonymParaphraser {
    rules: Vec<(String, String)>,
}

impl Default for SynonymParaphraser {
    fn default() -> Self {
        let rules = [
            ("are eligible for", "qualify for"),
            ("is an exclusion criterion of", "rules patients out of"),
            ("patients with", "people with"),
            ("is taken orally", "is swallowed"),
            ("an infusion of", "an intravenous dose of"),
            ("occurred in", "was observed in"),
            ("no patient in", "not a single patient in"),
            ("experienced", "suffered"),
            ("in total", "altogether"),
            ("responded", "showed a response"),
            ("the primary trial", "the first trial"),
            ("both trials", "the two trials"),
            ("either trial", "any trial"),
        ];
        Self::new(rules.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
    }
}

impl SynonymParaphraser {
    /// Rules apply in order, each to whole-word occurrences.
    pub fn new(rules: Vec<(String, String)>) -> Self {
        Self { rules }
    }
}

impl Paraphraser for SynonymParaphraser {
    fn paraphrase(&self, text: &str) -> std::result::Result<String, String> {
        let mut padded = format!(" {} ", text.split_whitespace().collect::<Vec<_>>().join(" "));
        let mut changed = false;
        for (from, to) in &self.rules {
            let needle = format!(" {from} ");
            if padded.contains(&needle) {
                padded = padded.replace(&needle, &format!(" {to} "));
                changed = true;
            }
        }
        if changed {
            Ok(padded.trim().to_string())
        } else {
            Err(format!("no paraphrase rule applies to `{text}`"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Same,
    Different,
}

impl PairLabel {
    /// Class index of the pair network: 0 same, 1 different.
    pub fn target(self) -> u8 {
        match self {
            PairLabel::Same => 0,
            PairLabel::Different => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub id: String,
    pub first: String,
    pub second: String,
    pub premise: PremiseKey,
    pub label: PairLabel,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairGeneration {
    pub pairs: Vec<PairExample>,
    /// Contradicting pairs found in the input.
    pub contradicting_pairs: usize,
    /// Contradicting pairs skipped because paraphrasing failed.
    pub failures: usize,
}

/// Builds the four labelled sequences for every contradicting pair of every
/// hypothesis group.
pub fn generate_pair_training_data(dataset: &Dataset, paraphraser: &dyn Paraphraser) -> Result<PairGeneration> {
    let mut out = PairGeneration::default();
    for (key, members) in dataset.hypothesis_groups() {
        let insts: Vec<&Instance> = members
            .iter()
            .map(|u| dataset.instance(u).ok_or_else(|| Error::Alignment { key: u.clone() }))
            .collect::<Result<_>>()?;
        for i in 0..insts.len() {
            for j in i + 1..insts.len() {
                let (a, b) = (insts[i], insts[j]);
                let (Some(la), Some(lb)) = (a.label, b.label) else { continue };
                if la == lb {
                    continue;
                }
                out.contradicting_pairs += 1;
                let para = paraphraser
                    .paraphrase(&a.hypothesis)
                    .and_then(|pa| paraphraser.paraphrase(&b.hypothesis).map(|pb| (pa, pb)));
                let (pa, pb) = match para {
                    Ok(v) => v,
                    Err(reason) => {
                        log::warn!("skipping pair {} / {}: {reason}", a.uuid, b.uuid);
                        out.failures += 1;
                        continue;
                    }
                };
                let base = format!("{}~{}", a.uuid, b.uuid);
                let rows = [
                    (&a.hypothesis, &pa, PairLabel::Same),
                    (&b.hypothesis, &pb, PairLabel::Same),
                    (&a.hypothesis, &b.hypothesis, PairLabel::Different),
                    (&b.hypothesis, &a.hypothesis, PairLabel::Different),
                ];
                for (k, (first, second, label)) in rows.into_iter().enumerate() {
                    out.pairs.push(PairExample {
                        id: format!("{base}/{k}"),
                        first: first.clone(),
                        second: second.clone(),
                        premise: key.clone(),
                        label,
                    });
                }
            }
        }
    }
    if out.failures > 0 {
        log::warn!("{} of {} contradicting pairs skipped", out.failures, out.contradicting_pairs);
    }
    Ok(out)
}

/// The premise a group of hypotheses shares, laid out as for entailment
/// (both trials behind markers for comparisons).
pub fn pair_premise(key: &PremiseKey, trials: &BTreeMap<String, TrialRecord>) -> Result<PremiseView> {
    let probe = Instance {
        uuid: key.to_string(),
        kind: if key.secondary_trial_id.is_some() { InstanceKind::Comparison } else { InstanceKind::Single },
        section: key.section,
        hypothesis: String::new(),
        primary_trial_id: key.primary_trial_id.clone(),
        secondary_trial_id: key.secondary_trial_id.clone(),
        label: None,
        primary_evidence: None,
        secondary_evidence: None,
    };
    build_premise(&probe, trials, Task::A)?
        .into_joint()
        .ok_or_else(|| Error::Validation(format!("no joint premise for {key}")))
}

/// Pair data together with the trials its premises reference, stored in
/// the corpus envelope (`trials`, then `pairs`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairDataset {
    pub trials: BTreeMap<String, TrialRecord>,
    pub pairs: Vec<PairExample>,
}

#[derive(Serialize, Deserialize)]
struct PairFile {
    trials: RawTrials,
    pairs: Vec<PairExample>,
}

impl PairDataset {
    pub fn new(dataset: &Dataset, pairs: Vec<PairExample>) -> Result<Self> {
        let mut trials = BTreeMap::new();
        for p in &pairs {
            for id in std::iter::once(&p.premise.primary_trial_id).chain(p.premise.secondary_trial_id.as_ref()) {
                let t = dataset.trials.get(id).ok_or_else(|| Error::UnknownTrial { uuid: p.id.clone(), trial_id: id.clone() })?;
                trials.insert(id.clone(), t.clone());
            }
        }
        Ok(Self { trials, pairs })
    }

    pub fn premise(&self, pair: &PairExample) -> Result<PremiseView> {
        pair_premise(&pair.premise, &self.trials)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PairFile { trials: trials_to_raw(&self.trials), pairs: self.pairs.clone() };
        std::fs::write(path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PairFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let ds = Self { trials: trials_from_raw(file.trials)?, pairs: file.pairs };
        for p in &ds.pairs {
            ds.premise(p)?;
        }
        Ok(ds)
    }
}
