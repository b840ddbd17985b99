//! Entailment from a conditional sequence scorer: the probabilities of
//! generating the label words `entailment` and `contradiction` given the
//! formatted input, renormalised over the two labels.

mod seq2seq;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_premise, Dataset, Instance, PremiseView, TrialRecord};
use crate::ensemble::PredictionSet;
use crate::error::{Error, Result};
use crate::Task;

pub use seq2seq::{CharSeq2Seq, CharVocab, Seq2SeqConfig, Seq2SeqTrainReport};

pub const ENTAILMENT_WORD: &str = "entailment";
pub const CONTRADICTION_WORD: &str = "contradiction";

/// Raw label-word probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub p_ent: f64,
    pub p_con: f64,
}

/// How a scorer may be driven from several threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    /// Calls on one shared instance may run concurrently.
    Shared,
    /// Calls must be serialised (or each thread given its own clone).
    PerThread,
}

/// Probability of a target sequence given an input text.
pub trait SequenceScorer: Send + Sync {
    fn score(&self, input: &str, target: &str) -> std::result::Result<f64, String>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }
}

/// Returns fixed label-word probabilities whatever the input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StubScorer {
    pub p_ent: f64,
    pub p_con: f64,
}

impl SequenceScorer for StubScorer {
    fn score(&self, _input: &str, target: &str) -> std::result::Result<f64, String> {
        match target {
            ENTAILMENT_WORD => Ok(self.p_ent),
            CONTRADICTION_WORD => Ok(self.p_con),
            other => Err(format!("stub scorer knows no target `{other}`")),
        }
    }
}

/// `nli hypothesis: {S} premise: {P}` with the premise sentences joined by
/// single spaces.
pub fn format_input(hypothesis: &str, premise: &PremiseView) -> Result<String> {
    if hypothesis.trim().is_empty() {
        return Err(Error::Argument("empty hypothesis".into()));
    }
    Ok(format!("nli hypothesis: {hypothesis} premise: {}", premise.sentences.join(" ")))
}

/// `(p_con, p_ent) / (p_con + p_ent)`, ordered as contradiction, entailment.
pub fn normalize_entailment(scores: LabelScores) -> Result<[f64; 2]> {
    let LabelScores { p_ent, p_con } = scores;
    for (name, v) in [("entailment", p_ent), ("contradiction", p_con)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Numeric(format!("{name} probability {v} outside [0, 1]")));
        }
    }
    let z = p_ent + p_con;
    if z <= 0.0 {
        return Err(Error::UndefinedScore("both label words have probability zero".into()));
    }
    Ok([p_con / z, p_ent / z])
}

/// Scorer input of one instance over its joint premise.
pub fn input_for(inst: &Instance, trials: &BTreeMap<String, TrialRecord>) -> Result<String> {
    let premise = build_premise(inst, trials, Task::A)?
        .into_joint()
        .ok_or_else(|| Error::Validation(format!("no joint premise for {}", inst.uuid)))?;
    format_input(&inst.hypothesis, &premise)
}

/// Task A probabilities for one instance from two scorer calls.
pub fn score_instance(
    scorer: &dyn SequenceScorer,
    inst: &Instance,
    trials: &BTreeMap<String, TrialRecord>,
) -> Result<[f64; 2]> {
    let input = input_for(inst, trials)?;
    let call = |target: &str| {
        scorer
            .score(&input, target)
            .map_err(|message| Error::Scorer { uuid: inst.uuid.clone(), message })
    };
    let scores = LabelScores { p_ent: call(ENTAILMENT_WORD)?, p_con: call(CONTRADICTION_WORD)? };
    normalize_entailment(scores).map_err(|e| match e {
        Error::UndefinedScore(m) => Error::UndefinedScore(format!("{}: {m}", inst.uuid)),
        other => Error::Scorer { uuid: inst.uuid.clone(), message: other.to_string() },
    })
}

/// Task A predictions for every instance of `dataset`.
pub fn score_dataset(scorer: &dyn SequenceScorer, dataset: &Dataset) -> Result<PredictionSet> {
    let run = |inst: &Instance| score_instance(scorer, inst, &dataset.trials).map(|p| (inst.uuid.clone(), p));
    let rows: Vec<(String, [f64; 2])> = match scorer.concurrency() {
        Concurrency::Shared => dataset.instances.par_iter().map(run).collect::<Result<_>>()?,
        Concurrency::PerThread => dataset.instances.iter().map(run).collect::<Result<_>>()?,
    };
    Ok(PredictionSet { task_a: rows.into_iter().collect(), task_b: BTreeMap::new(), contributors: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticConfig};

    fn view(sentences: &[&str]) -> PremiseView {
        PremiseView {
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
            origins: Vec::new(),
        }
    }

    #[test]
    fn input_template() {
        assert_eq!(format_input("A", &view(&["B.", "C."])).unwrap(), "nli hypothesis: A premise: B. C.");
        assert!(matches!(format_input(" \t", &view(&["B."])), Err(Error::Argument(_))));
    }

    #[test]
    fn normalisation_examples() {
        let p = normalize_entailment(LabelScores { p_ent: 0.03, p_con: 0.01 }).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert_eq!(normalize_entailment(LabelScores { p_ent: 0.2, p_con: 0.2 }).unwrap(), [0.5, 0.5]);
        assert!(matches!(
            normalize_entailment(LabelScores { p_ent: 0.0, p_con: 0.0 }),
            Err(Error::UndefinedScore(_))
        ));
        assert!(normalize_entailment(LabelScores { p_ent: 1.5, p_con: 0.1 }).is_err());
    }

    #[test]
    fn stub_scores_an_instance() {
        let ds = generate_synthetic(3, 4, &SyntheticConfig::default()).unwrap();
        let stub = StubScorer { p_ent: 0.2, p_con: 0.6 };
        let p = score_instance(&stub, &ds.instances[0], &ds.trials).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
        let set = score_dataset(&stub, &ds).unwrap();
        assert_eq!(set.task_a.len(), ds.instances.len());
    }

    struct Broken;
    impl SequenceScorer for Broken {
        fn score(&self, _: &str, _: &str) -> std::result::Result<f64, String> {
            Err("backend offline".into())
        }
        fn concurrency(&self) -> Concurrency {
            Concurrency::PerThread
        }
    }

    #[test]
    fn scorer_failures_carry_the_uuid() {
        let ds = generate_synthetic(3, 2, &SyntheticConfig::default()).unwrap();
        match score_instance(&Broken, &ds.instances[0], &ds.trials) {
            Err(Error::Scorer { uuid, message }) => {
                assert_eq!(uuid, ds.instances[0].uuid);
                assert!(message.contains("offline"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let zero = StubScorer { p_ent: 0.0, p_con: 0.0 };
        let err = score_instance(&zero, &ds.instances[1], &ds.trials).unwrap_err();
        assert!(err.to_string().contains(&ds.instances[1].uuid));
    }
}
