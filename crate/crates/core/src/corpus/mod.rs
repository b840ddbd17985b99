//! Dataset schema, ingestion, premise construction, token-sequence assembly,
//! synthetic data and fold planning.
//!
//! The on-disk format is a single UTF-8 JSON document:
//!
//! ```json
//! {
//!   "trials": {
//!     "NCT00001": {
//!       "Intervention": ["..."], "Eligibility": ["..."],
//!       "Results": ["..."], "Adverse Events": ["..."]
//!     }
//!   },
//!   "instances": [
//!     {"uuid": "...", "kind": "Single", "section": "Results",
//!      "hypothesis": "...", "primary_trial_id": "NCT00001",
//!      "label": "Entailment", "primary_evidence": [0, 2]}
//!   ]
//! }
//! ```
//!
//! `secondary_trial_id` and `secondary_evidence` appear only on comparison
//! instances. Evidence indices are 0-based positions in the referenced
//! section.

mod folds;
mod premise;
mod sequence;
pub mod synthetic;
mod tokenizer;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use folds::{split_folds, FoldPlan};
pub use premise::{build_premise, BuiltPremise, PremiseView, SentenceOrigin, TrialSide, PRIMARY_MARKER, SECONDARY_MARKER};
pub use sequence::{encode_pair, encode_segments, TokenSequence};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use tokenizer::{Tokenizer, CLS, PAD, SEP, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Section {
    Intervention,
    Eligibility,
    Results,
    #[serde(rename = "Adverse Events")]
    AdverseEvents,
}

impl Section {
    pub const ALL: [Section; 4] = [
        Section::Intervention,
        Section::Eligibility,
        Section::Results,
        Section::AdverseEvents,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Section::Intervention => "Intervention",
            Section::Eligibility => "Eligibility",
            Section::Results => "Results",
            Section::AdverseEvents => "Adverse Events",
        }
    }

    pub fn from_name(name: &str) -> Option<Section> {
        Section::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Short column header used in reports.
    pub fn abbrev(self) -> &'static str {
        match self {
            Section::Intervention => "Int",
            Section::Eligibility => "Elig",
            Section::Results => "Res",
            Section::AdverseEvents => "AE",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstanceKind {
    Single,
    Comparison,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Contradiction,
    Entailment,
}

impl Label {
    /// Task A target: 1 for entailment, 0 for contradiction.
    pub fn as_target(self) -> u8 {
        match self {
            Label::Contradiction => 0,
            Label::Entailment => 1,
        }
    }

    pub fn from_target(y: u8) -> Label {
        if y == 0 {
            Label::Contradiction
        } else {
            Label::Entailment
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Contradiction => Label::Entailment,
            Label::Entailment => Label::Contradiction,
        }
    }
}

/// One clinical-trial-style report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialRecord {
    pub trial_id: String,
    pub sections: BTreeMap<Section, Vec<String>>,
}

impl TrialRecord {
    pub fn section(&self, section: Section) -> &[String] {
        self.sections.get(&section).map(Vec::as_slice).unwrap_or(&[])
    }

    fn validate(&self) -> Result<()> {
        for s in Section::ALL {
            let Some(sentences) = self.sections.get(&s) else {
                return Err(Error::Validation(format!(
                    "trial {} is missing section {s}",
                    self.trial_id
                )));
            };
            if let Some(i) = sentences.iter().position(|x| x.trim().is_empty()) {
                return Err(Error::Validation(format!(
                    "trial {} section {s} sentence {i} is empty",
                    self.trial_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub uuid: String,
    pub kind: InstanceKind,
    pub section: Section,
    pub hypothesis: String,
    pub primary_trial_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_trial_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_evidence: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_evidence: Option<Vec<usize>>,
}

impl Instance {
    pub fn trial_id(&self, side: TrialSide) -> Option<&str> {
        match side {
            TrialSide::Primary => Some(&self.primary_trial_id),
            TrialSide::Secondary => self.secondary_trial_id.as_deref(),
        }
    }

    pub fn evidence(&self, side: TrialSide) -> Option<&[usize]> {
        match side {
            TrialSide::Primary => self.primary_evidence.as_deref(),
            TrialSide::Secondary => self.secondary_evidence.as_deref(),
        }
    }

    pub fn sides(&self) -> &'static [TrialSide] {
        match self.kind {
            InstanceKind::Single => &[TrialSide::Primary],
            InstanceKind::Comparison => &[TrialSide::Primary, TrialSide::Secondary],
        }
    }

    fn validate(&self, trials: &BTreeMap<String, TrialRecord>) -> Result<()> {
        if self.hypothesis.trim().is_empty() {
            return Err(Error::Validation(format!("instance {} has an empty hypothesis", self.uuid)));
        }
        match (self.kind, &self.secondary_trial_id) {
            (InstanceKind::Single, Some(_)) => {
                return Err(Error::Validation(format!(
                    "instance {} is Single but names a secondary trial",
                    self.uuid
                )))
            }
            (InstanceKind::Comparison, None) => {
                return Err(Error::Validation(format!(
                    "instance {} is Comparison but has no secondary trial",
                    self.uuid
                )))
            }
            _ => {}
        }
        if self.kind == InstanceKind::Single && self.secondary_evidence.is_some() {
            return Err(Error::Validation(format!(
                "instance {} is Single but carries secondary evidence",
                self.uuid
            )));
        }
        for &side in self.sides() {
            let id = self.trial_id(side).expect("side present");
            let trial = trials.get(id).ok_or_else(|| Error::UnknownTrial {
                uuid: self.uuid.clone(),
                trial_id: id.to_string(),
            })?;
            let n = trial.section(self.section).len();
            if let Some(ev) = self.evidence(side) {
                if let Some(&bad) = ev.iter().find(|&&i| i >= n) {
                    return Err(Error::Validation(format!(
                        "instance {} evidence index {bad} out of range for {} {} ({n} sentences)",
                        self.uuid, id, self.section
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Instances plus the trials they reference.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub trials: BTreeMap<String, TrialRecord>,
    pub instances: Vec<Instance>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    trials: RawTrials,
    instances: Vec<RawInstance>,
}

/// Instance as it appears on disk; the section stays a string until
/// validation so an unknown name can be reported against its uuid.
#[derive(Serialize, Deserialize)]
struct RawInstance {
    uuid: String,
    kind: InstanceKind,
    section: String,
    hypothesis: String,
    primary_trial_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    secondary_trial_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    primary_evidence: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    secondary_evidence: Option<Vec<usize>>,
}

pub(crate) type RawTrials = BTreeMap<String, BTreeMap<String, Vec<String>>>;

pub(crate) fn trials_to_raw(trials: &BTreeMap<String, TrialRecord>) -> RawTrials {
    trials
        .iter()
        .map(|(id, t)| {
            let sections = t.sections.iter().map(|(s, v)| (s.name().to_string(), v.clone())).collect();
            (id.clone(), sections)
        })
        .collect()
}

pub(crate) fn trials_from_raw(raw: RawTrials) -> Result<BTreeMap<String, TrialRecord>> {
    let mut trials = BTreeMap::new();
    for (trial_id, raw_sections) in raw {
        let mut sections = BTreeMap::new();
        for (name, sentences) in raw_sections {
            let section = Section::from_name(&name)
                .ok_or_else(|| Error::Validation(format!("trial {trial_id} has unknown section `{name}`")))?;
            sections.insert(section, sentences);
        }
        let record = TrialRecord { trial_id: trial_id.clone(), sections };
        record.validate()?;
        trials.insert(trial_id, record);
    }
    Ok(trials)
}

impl Dataset {
    pub fn new(trials: BTreeMap<String, TrialRecord>, instances: Vec<Instance>) -> Result<Self> {
        let ds = Dataset { trials, instances };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for t in self.trials.values() {
            t.validate()?;
        }
        let mut seen = std::collections::HashSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.uuid.as_str()) {
                return Err(Error::Validation(format!("duplicate uuid {}", inst.uuid)));
            }
            inst.validate(&self.trials)?;
        }
        Ok(())
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let trials = trials_from_raw(file.trials)?;
        let instances = file
            .instances
            .into_iter()
            .map(|r| {
                let section = Section::from_name(&r.section).ok_or_else(|| {
                    Error::Validation(format!(
                        "instance {} has unknown section `{}`",
                        r.uuid, r.section
                    ))
                })?;
                Ok(Instance {
                    uuid: r.uuid,
                    kind: r.kind,
                    section,
                    hypothesis: r.hypothesis,
                    primary_trial_id: r.primary_trial_id,
                    secondary_trial_id: r.secondary_trial_id,
                    label: r.label,
                    primary_evidence: r.primary_evidence,
                    secondary_evidence: r.secondary_evidence,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(trials, instances)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = DatasetFile {
            trials: trials_to_raw(&self.trials),
            instances: self
                .instances
                .iter()
                .map(|i| RawInstance {
                    uuid: i.uuid.clone(),
                    kind: i.kind,
                    section: i.section.name().to_string(),
                    hypothesis: i.hypothesis.clone(),
                    primary_trial_id: i.primary_trial_id.clone(),
                    secondary_trial_id: i.secondary_trial_id.clone(),
                    label: i.label,
                    primary_evidence: i.primary_evidence.clone(),
                    secondary_evidence: i.secondary_evidence.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json_string()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn instance(&self, uuid: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.uuid == uuid)
    }

    /// Keeps the instances selected by `keep` and the trials they reference.
    pub fn subset(&self, keep: impl Fn(&Instance) -> bool) -> Dataset {
        let instances: Vec<Instance> = self.instances.iter().filter(|i| keep(i)).cloned().collect();
        let mut trials = BTreeMap::new();
        for inst in &instances {
            for &side in inst.sides() {
                let id = inst.trial_id(side).expect("side present");
                if let Some(t) = self.trials.get(id) {
                    trials.insert(id.to_string(), t.clone());
                }
            }
        }
        Dataset { trials, instances }
    }

    /// Instances grouped by shared premise: `(primary, secondary, section)`.
    /// Groups and members keep first-appearance order.
    pub fn hypothesis_groups(&self) -> Vec<(PremiseKey, Vec<String>)> {
        let mut order: Vec<PremiseKey> = Vec::new();
        let mut members: BTreeMap<PremiseKey, Vec<String>> = BTreeMap::new();
        for inst in &self.instances {
            let key = PremiseKey::of(inst);
            let entry = members.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(inst.uuid.clone());
        }
        order
            .into_iter()
            .map(|k| {
                let m = members.remove(&k).unwrap_or_default();
                (k, m)
            })
            .collect()
    }
}

/// Identity of a premise shared by several hypotheses.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PremiseKey {
    pub primary_trial_id: String,
    pub secondary_trial_id: Option<String>,
    pub section: Section,
}

impl PremiseKey {
    pub fn of(inst: &Instance) -> Self {
        PremiseKey {
            primary_trial_id: inst.primary_trial_id.clone(),
            secondary_trial_id: inst.secondary_trial_id.clone(),
            section: inst.section,
        }
    }
}

impl fmt::Display for PremiseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.secondary_trial_id {
            Some(s) => write!(f, "{}+{}/{}", self.primary_trial_id, s, self.section),
            None => write!(f, "{}/{}", self.primary_trial_id, self.section),
        }
    }
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_json_str(&text, path)
}
