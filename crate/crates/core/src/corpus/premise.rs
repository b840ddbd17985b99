use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Instance, InstanceKind, Section, TrialRecord};
use crate::error::{Error, Result};
use crate::Task;

pub const PRIMARY_MARKER: &str = "primary trial:";
pub const SECONDARY_MARKER: &str = "secondary trial:";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialSide {
    Primary,
    Secondary,
}

/// Where a premise sentence came from. `original_index` is `None` for the
/// inserted "primary trial:" / "secondary trial:" marker sentences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceOrigin {
    pub trial_id: String,
    pub side: TrialSide,
    pub section: Section,
    pub original_index: Option<usize>,
}

impl SentenceOrigin {
    pub fn is_marker(&self) -> bool {
        self.original_index.is_none()
    }
}

/// Ordered premise sentences with provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PremiseView {
    pub sentences: Vec<String>,
    pub origins: Vec<SentenceOrigin>,
}

impl PremiseView {
    pub fn m(&self) -> usize {
        self.sentences.len()
    }

    /// Per-sentence retrieval targets for `inst`; marker sentences get 0.
    pub fn evidence_labels(&self, inst: &Instance) -> Vec<u8> {
        self.origins
            .iter()
            .map(|o| match (o.original_index, inst.evidence(o.side)) {
                (Some(i), Some(ev)) if ev.contains(&i) => 1,
                _ => 0,
            })
            .collect()
    }

    /// Sentences joined with single spaces.
    pub fn joined(&self) -> String {
        self.sentences.join(" ")
    }

    fn from_section(trial: &TrialRecord, side: TrialSide, section: Section) -> Result<Self> {
        let sentences = trial.section(section).to_vec();
        if sentences.is_empty() {
            return Err(Error::EmptySection {
                trial_id: trial.trial_id.clone(),
                section: section.name().to_string(),
            });
        }
        let origins = (0..sentences.len())
            .map(|i| SentenceOrigin {
                trial_id: trial.trial_id.clone(),
                side,
                section,
                original_index: Some(i),
            })
            .collect();
        Ok(PremiseView { sentences, origins })
    }

    fn marker(text: &str, trial: &TrialRecord, side: TrialSide, section: Section) -> (String, SentenceOrigin) {
        (
            text.to_string(),
            SentenceOrigin {
                trial_id: trial.trial_id.clone(),
                side,
                section,
                original_index: None,
            },
        )
    }
}

/// Premise for one instance and task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuiltPremise {
    /// Single instances (both tasks) and comparison instances for Task A.
    Joint(PremiseView),
    /// Comparison instances for Task B: each trial is paired with the
    /// hypothesis on its own.
    PerTrial { primary: PremiseView, secondary: PremiseView },
}

impl BuiltPremise {
    pub fn views(&self) -> Vec<(TrialSide, &PremiseView)> {
        match self {
            BuiltPremise::Joint(v) => vec![(TrialSide::Primary, v)],
            BuiltPremise::PerTrial { primary, secondary } => {
                vec![(TrialSide::Primary, primary), (TrialSide::Secondary, secondary)]
            }
        }
    }

    pub fn into_joint(self) -> Option<PremiseView> {
        match self {
            BuiltPremise::Joint(v) => Some(v),
            BuiltPremise::PerTrial { .. } => None,
        }
    }
}

fn lookup<'a>(
    trials: &'a BTreeMap<String, TrialRecord>,
    inst: &Instance,
    id: &str,
) -> Result<&'a TrialRecord> {
    trials.get(id).ok_or_else(|| Error::UnknownTrial {
        uuid: inst.uuid.clone(),
        trial_id: id.to_string(),
    })
}

/// Builds the premise for `inst`.
///
/// Comparison instances for Task A concatenate both trials behind marker
/// sentences (`primary trial:` ... `secondary trial:` ...); for Task B each
/// trial forms its own premise.
pub fn build_premise(
    inst: &Instance,
    trials: &BTreeMap<String, TrialRecord>,
    task: Task,
) -> Result<BuiltPremise> {
    let primary = lookup(trials, inst, &inst.primary_trial_id)?;
    let primary_view = PremiseView::from_section(primary, TrialSide::Primary, inst.section)?;
    if inst.kind == InstanceKind::Single {
        return Ok(BuiltPremise::Joint(primary_view));
    }
    let secondary_id = inst.secondary_trial_id.as_deref().ok_or_else(|| {
        Error::Validation(format!("instance {} is Comparison but has no secondary trial", inst.uuid))
    })?;
    let secondary = lookup(trials, inst, secondary_id)?;
    let secondary_view = PremiseView::from_section(secondary, TrialSide::Secondary, inst.section)?;
    match task {
        Task::B => Ok(BuiltPremise::PerTrial { primary: primary_view, secondary: secondary_view }),
        Task::A => {
            let m = primary_view.m() + secondary_view.m() + 2;
            let mut sentences = Vec::with_capacity(m);
            let mut origins = Vec::with_capacity(m);
            let (s, o) = PremiseView::marker(PRIMARY_MARKER, primary, TrialSide::Primary, inst.section);
            sentences.push(s);
            origins.push(o);
            sentences.extend(primary_view.sentences);
            origins.extend(primary_view.origins);
            let (s, o) = PremiseView::marker(SECONDARY_MARKER, secondary, TrialSide::Secondary, inst.section);
            sentences.push(s);
            origins.push(o);
            sentences.extend(secondary_view.sentences);
            origins.extend(secondary_view.origins);
            Ok(BuiltPremise::Joint(PremiseView { sentences, origins }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, Label};

    fn trial(id: &str, sizes: [usize; 4]) -> TrialRecord {
        let sections = Section::ALL
            .iter()
            .zip(sizes)
            .map(|(&s, n)| (s, (0..n).map(|i| format!("{id} {} sentence {i} .", s.abbrev())).collect()))
            .collect();
        TrialRecord { trial_id: id.to_string(), sections }
    }

    fn inst(kind: InstanceKind, section: Section) -> Instance {
        Instance {
            uuid: "x".into(),
            kind,
            section,
            hypothesis: "h".into(),
            primary_trial_id: "T1".into(),
            secondary_trial_id: (kind == InstanceKind::Comparison).then(|| "T2".to_string()),
            label: Some(Label::Entailment),
            primary_evidence: Some(vec![1]),
            secondary_evidence: (kind == InstanceKind::Comparison).then(|| vec![0]),
        }
    }

    fn trials() -> BTreeMap<String, TrialRecord> {
        [trial("T1", [1, 1, 4, 3]), trial("T2", [1, 1, 1, 2])]
            .into_iter()
            .map(|t| (t.trial_id.clone(), t))
            .collect()
    }

    #[test]
    fn single_uses_section_in_order() {
        let p = build_premise(&inst(InstanceKind::Single, Section::Results), &trials(), Task::A).unwrap();
        let v = p.into_joint().unwrap();
        assert_eq!(v.m(), 4);
        for (i, o) in v.origins.iter().enumerate() {
            assert_eq!(o.trial_id, "T1");
            assert_eq!(o.section, Section::Results);
            assert_eq!(o.original_index, Some(i));
        }
    }

    #[test]
    fn comparison_task_a_concatenates_with_markers() {
        let i = inst(InstanceKind::Comparison, Section::AdverseEvents);
        let v = build_premise(&i, &trials(), Task::A).unwrap().into_joint().unwrap();
        // manual concatenation: marker + 3 + marker + 2
        let mut expected = vec![PRIMARY_MARKER.to_string()];
        expected.extend(trials()["T1"].section(Section::AdverseEvents).iter().cloned());
        expected.push(SECONDARY_MARKER.to_string());
        expected.extend(trials()["T2"].section(Section::AdverseEvents).iter().cloned());
        assert_eq!(v.m(), 7);
        assert_eq!(v.sentences, expected);
        let markers: Vec<usize> = (0..v.m()).filter(|&k| v.origins[k].is_marker()).collect();
        assert_eq!(markers, vec![0, 4]);
        assert_eq!(v.evidence_labels(&i), vec![0, 0, 1, 0, 0, 1, 0]);
    }

    #[test]
    fn comparison_task_b_splits_trials() {
        let i = inst(InstanceKind::Comparison, Section::AdverseEvents);
        match build_premise(&i, &trials(), Task::B).unwrap() {
            BuiltPremise::PerTrial { primary, secondary } => {
                assert_eq!(primary.m(), 3);
                assert_eq!(secondary.m(), 2);
                assert_eq!(primary.evidence_labels(&i), vec![0, 1, 0]);
                assert_eq!(secondary.evidence_labels(&i), vec![1, 0]);
            }
            other => panic!("expected per-trial premise, got {other:?}"),
        }
    }

    #[test]
    fn empty_section_is_named() {
        let mut t = trials();
        t.get_mut("T1").unwrap().sections.insert(Section::Results, vec![]);
        let err = build_premise(&inst(InstanceKind::Single, Section::Results), &t, Task::A).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("T1") && msg.contains("Results"), "{msg}");
    }

    #[test]
    fn dataset_fixture_builds() {
        let ds = Dataset { trials: trials(), instances: vec![inst(InstanceKind::Single, Section::Results)] };
        ds.validate().unwrap();
    }
}
