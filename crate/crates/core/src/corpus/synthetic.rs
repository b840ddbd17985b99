//! Templated trial reports and hypotheses with known labels and evidence.
//!
//! Every premise group carries exactly one mutually exclusive hypothesis pair
//! (one entailed, one contradicted), so labels are balanced and every premise
//! offers a contradicting pair for consistency training. Hypotheses reuse the
//! polarity wording of the sentence they are about (`eligible` / `excluded`,
//! `occurred` / `no patient ... experienced`, the route word), so a label can
//! be read off by aligning words with the evidence.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Instance, InstanceKind, Label, Section, TrialRecord};
use crate::error::{Error, Result};

pub const CONDITIONS: &[&str] = &[
    "diabetes", "asthma", "hypertension", "hepatitis", "anemia", "epilepsy", "arthritis",
    "migraine", "obesity", "psoriasis", "glaucoma", "lupus",
];
pub const DRUGS: &[&str] = &[
    "letrozole", "tamoxifen", "paclitaxel", "docetaxel", "capecitabine", "trastuzumab",
    "anastrozole", "exemestane", "fulvestrant", "lapatinib", "everolimus", "palbociclib",
];
pub const EVENTS: &[&str] = &[
    "nausea", "fatigue", "neutropenia", "diarrhoea", "alopecia", "rash", "vomiting",
    "headache", "insomnia", "neuropathy", "stomatitis", "dyspnea",
];
pub const COHORTS: &[&str] = &["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"];
pub const ROUTES: &[&str] = &["orally", "intravenously"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Share of non-Results groups built as two-trial comparisons.
    pub comparison_fraction: f64,
    /// Share of Results groups that ask for the sum of two cohorts.
    pub sum_fraction: f64,
    /// Prepended to trial ids and uuids so separately generated splits do not
    /// collide.
    pub id_prefix: String,
    /// Entities drawn from each name pool (conditions, drugs, events,
    /// cohorts); capped at the pool length.
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
}

fn default_pool_size() -> usize {
    12
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            min_sentences: 3,
            max_sentences: 6,
            comparison_fraction: 0.25,
            sum_fraction: 0.25,
            id_prefix: String::new(),
            pool_size: default_pool_size(),
        }
    }
}

impl SyntheticConfig {
    /// Short premises over four entities per pool and no arithmetic items:
    /// the setting the toy presets are tuned for.
    pub fn toy() -> Self {
        Self { min_sentences: 2, max_sentences: 3, sum_fraction: 0.0, pool_size: 4, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
enum Fact {
    Eligibility { condition: &'static str, eligible: bool },
    AgeFloor { years: u32 },
    Intervention { drug: &'static str, route: &'static str, weeks: u32 },
    Cohort { name: &'static str, drug: &'static str, responders: u32 },
    Event { event: &'static str, count: u32 },
}

impl Fact {
    fn render(&self) -> String {
        match self {
            Fact::Eligibility { condition, eligible: true } => format!("patients with {condition} are eligible ."),
            Fact::Eligibility { condition, eligible: false } => format!("{condition} is an exclusion criterion ."),
            Fact::AgeFloor { years } => format!("patients must be at least {years} years old ."),
            Fact::Intervention { drug, route, weeks } if *route == ROUTES[0] => {
                format!("{drug} is taken {route} every {weeks} weeks .")
            }
            Fact::Intervention { drug, weeks, .. } => format!("an infusion of {drug} is given every {weeks} weeks ."),
            Fact::Cohort { name, drug, responders: 0 } => format!("no patient in cohort {name} responded to {drug} ."),
            Fact::Cohort { name, drug, responders } => {
                format!("cohort {name} received {drug} and {responders} patients responded .")
            }
            Fact::Event { event, count: 0 } => format!("no patient experienced {event} ."),
            Fact::Event { event, count } => format!("{event} occurred in {count} patients ."),
        }
    }

    fn key(&self) -> Option<&'static str> {
        match self {
            Fact::Eligibility { condition, .. } => Some(condition),
            Fact::Intervention { drug, .. } => Some(drug),
            Fact::Cohort { name, .. } => Some(name),
            Fact::Event { event, .. } => Some(event),
            Fact::AgeFloor { .. } => None,
        }
    }
}

struct TrialFacts {
    id: String,
    sections: BTreeMap<Section, Vec<Fact>>,
}

impl TrialFacts {
    fn record(&self) -> TrialRecord {
        TrialRecord {
            trial_id: self.id.clone(),
            sections: self
                .sections
                .iter()
                .map(|(s, facts)| (*s, facts.iter().map(Fact::render).collect()))
                .collect(),
        }
    }

    fn facts(&self, s: Section) -> &[Fact] {
        &self.sections[&s]
    }

    fn position(&self, s: Section, key: &str) -> Option<usize> {
        self.facts(s).iter().position(|f| f.key() == Some(key))
    }

    /// Inserts `fact` at a random position, replacing any fact with the same key.
    fn plant(&mut self, s: Section, fact: Fact, rng: &mut ChaCha8Rng) -> usize {
        let facts = self.sections.get_mut(&s).expect("section");
        if let Some(i) = facts.iter().position(|f| f.key() == fact.key()) {
            facts[i] = fact;
            return i;
        }
        let at = rng.random_range(0..=facts.len());
        facts.insert(at, fact);
        at
    }
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
    trials: BTreeMap<String, TrialRecord>,
    instances: Vec<Instance>,
    next_trial: usize,
}

struct Pair {
    entailed: String,
    contradicted: String,
    primary_evidence: Vec<usize>,
    secondary_evidence: Option<Vec<usize>>,
}

impl Generator<'_> {
    fn count(&mut self) -> usize {
        self.rng.random_range(self.cfg.min_sentences..=self.cfg.max_sentences)
    }

    fn pool(&self, pool: &'static [&'static str]) -> &'static [&'static str] {
        &pool[..self.cfg.pool_size.clamp(2, pool.len())]
    }

    fn pick<T: Copy>(&mut self, pool: &[T], n: usize) -> Vec<T> {
        pool.choose_multiple(&mut self.rng, n.min(pool.len())).copied().collect()
    }

    fn new_trial(&mut self) -> TrialFacts {
        let id = format!("{}NCT{:05}", self.cfg.id_prefix, self.next_trial);
        self.next_trial += 1;
        let mut sections = BTreeMap::new();

        let n = self.count();
        let drugs = self.pick(self.pool(DRUGS), n);
        let facts = drugs
            .into_iter()
            .map(|drug| Fact::Intervention {
                drug,
                route: *ROUTES.choose(&mut self.rng).expect("routes"),
                weeks: self.rng.random_range(1..=4),
            })
            .collect();
        sections.insert(Section::Intervention, facts);

        let n = self.count();
        let conds = self.pick(self.pool(CONDITIONS), n);
        let mut facts: Vec<Fact> = conds
            .into_iter()
            .map(|condition| Fact::Eligibility { condition, eligible: self.rng.random_bool(0.5) })
            .collect();
        if self.rng.random_bool(0.5) {
            let at = self.rng.random_range(0..=facts.len());
            facts.insert(at, Fact::AgeFloor { years: self.rng.random_range(18..=21) });
        }
        sections.insert(Section::Eligibility, facts);

        let n = self.count().max(2);
        let names = self.pick(self.pool(COHORTS), n);
        let drugs = self.pick(self.pool(DRUGS), names.len());
        let facts = names
            .into_iter()
            .zip(drugs)
            .map(|(name, drug)| Fact::Cohort { name, drug, responders: self.rng.random_range(0..=60) })
            .collect();
        sections.insert(Section::Results, facts);

        let n = self.count();
        let events = self.pick(self.pool(EVENTS), n);
        let facts = events
            .into_iter()
            .map(|event| {
                let count = if self.rng.random_bool(0.3) { 0 } else { self.rng.random_range(1..=40) };
                Fact::Event { event, count }
            })
            .collect();
        sections.insert(Section::AdverseEvents, facts);

        TrialFacts { id, sections }
    }

    fn group(&mut self, index: usize) {
        let section = *Section::ALL.choose(&mut self.rng).expect("sections");
        let comparison = section != Section::Results && self.rng.random_bool(self.cfg.comparison_fraction);
        let mut primary = self.new_trial();
        let (pair, secondary) = if comparison {
            let mut secondary = self.new_trial();
            let pair = self.comparison_pair(section, &mut primary, &mut secondary);
            (pair, Some(secondary))
        } else {
            (self.single_pair(section, &mut primary), None)
        };

        let mut members = [(pair.entailed, Label::Entailment), (pair.contradicted, Label::Contradiction)];
        members.shuffle(&mut self.rng);
        for (k, (hypothesis, label)) in members.into_iter().enumerate() {
            self.instances.push(Instance {
                uuid: format!("{}g{index:05}-{}", self.cfg.id_prefix, ['a', 'b'][k]),
                kind: if comparison { InstanceKind::Comparison } else { InstanceKind::Single },
                section,
                hypothesis,
                primary_trial_id: primary.id.clone(),
                secondary_trial_id: secondary.as_ref().map(|t| t.id.clone()),
                label: Some(label),
                primary_evidence: Some(pair.primary_evidence.clone()),
                secondary_evidence: pair.secondary_evidence.clone(),
            });
        }
        self.trials.insert(primary.id.clone(), primary.record());
        if let Some(t) = secondary {
            self.trials.insert(t.id.clone(), t.record());
        }
    }

    fn single_pair(&mut self, section: Section, trial: &mut TrialFacts) -> Pair {
        let keyed: Vec<usize> = trial
            .facts(section)
            .iter()
            .enumerate()
            .filter(|(_, f)| f.key().is_some())
            .map(|(i, _)| i)
            .collect();
        let target = *keyed.choose(&mut self.rng).expect("keyed fact");
        let (a_true, a, b) = match &trial.facts(section)[target] {
            Fact::Eligibility { condition, eligible } => (
                *eligible,
                format!("patients with {condition} are eligible for the primary trial ."),
                format!("{condition} is an exclusion criterion of the primary trial ."),
            ),
            Fact::Intervention { drug, route, .. } => (
                *route == ROUTES[0],
                format!("{drug} is taken {} in the primary trial .", ROUTES[0]),
                format!("an infusion of {drug} is given in the primary trial ."),
            ),
            Fact::Event { event, .. } => {
                // half of the targets are forced to zero so both polarities are common
                let count = if self.rng.random_bool(0.5) { 0 } else { self.rng.random_range(1..=40) };
                let ev = *event;
                trial.sections.get_mut(&section).expect("section")[target] = Fact::Event { event: ev, count };
                (
                    count > 0,
                    format!("{ev} occurred in the primary trial ."),
                    format!("no patient in the primary trial experienced {ev} ."),
                )
            }
            Fact::Cohort { .. } => return self.results_pair(trial, target),
            Fact::AgeFloor { .. } => unreachable!("filtered"),
        };
        let (entailed, contradicted) = if a_true { (a, b) } else { (b, a) };
        Pair { entailed, contradicted, primary_evidence: vec![target], secondary_evidence: None }
    }

    fn results_pair(&mut self, trial: &mut TrialFacts, target: usize) -> Pair {
        let facts = trial.facts(Section::Results);
        let cohorts: Vec<(usize, &'static str, &'static str, u32)> = facts
            .iter()
            .enumerate()
            .filter_map(|(i, f)| match f {
                Fact::Cohort { name, drug, responders } => Some((i, *name, *drug, *responders)),
                _ => None,
            })
            .collect();
        if cohorts.len() >= 2 && self.rng.random_bool(self.cfg.sum_fraction) {
            let two: Vec<_> = cohorts.choose_multiple(&mut self.rng, 2).copied().collect();
            let (first, second) = if two[0].0 < two[1].0 { (two[0], two[1]) } else { (two[1], two[0]) };
            let total = first.3 + second.3;
            let wrong = loop {
                let delta: i64 = self.rng.random_range(1..=5) * if self.rng.random_bool(0.5) { 1 } else { -1 };
                let w = total as i64 + delta;
                if w >= 0 {
                    break w as u32;
                }
            };
            let text = |n: u32| {
                format!("in total {n} patients responded in cohorts {} and {} .", first.1, second.1)
            };
            return Pair {
                entailed: text(total),
                contradicted: text(wrong),
                primary_evidence: vec![first.0, second.0],
                secondary_evidence: None,
            };
        }
        let (_, name, drug, _) = *cohorts.iter().find(|c| c.0 == target).expect("target cohort");
        let responders = if self.rng.random_bool(0.5) { 0 } else { self.rng.random_range(1..=60) };
        trial.sections.get_mut(&Section::Results).expect("section")[target] = Fact::Cohort { name, drug, responders };
        let (a, b) = (
            format!("patients in cohort {name} responded ."),
            format!("no patient in cohort {name} responded ."),
        );
        let (entailed, contradicted) = if responders > 0 { (a, b) } else { (b, a) };
        Pair { entailed, contradicted, primary_evidence: vec![target], secondary_evidence: None }
    }

    fn comparison_pair(&mut self, section: Section, primary: &mut TrialFacts, secondary: &mut TrialFacts) -> Pair {
        let (fact, a_true, a, b) = match section {
            Section::Eligibility => {
                let condition = *self.pool(CONDITIONS).choose(&mut self.rng).expect("conditions");
                let eligible = self.rng.random_bool(0.5);
                (
                    Fact::Eligibility { condition, eligible },
                    eligible,
                    format!("patients with {condition} are eligible for both trials ."),
                    format!("{condition} is an exclusion criterion of both trials ."),
                )
            }
            Section::Intervention => {
                let drug = *self.pool(DRUGS).choose(&mut self.rng).expect("drugs");
                let route = *ROUTES.choose(&mut self.rng).expect("routes");
                (
                    Fact::Intervention { drug, route, weeks: self.rng.random_range(1..=4) },
                    route == ROUTES[0],
                    format!("{drug} is taken {} in both trials .", ROUTES[0]),
                    format!("an infusion of {drug} is given in both trials ."),
                )
            }
            Section::AdverseEvents => {
                let event = *self.pool(EVENTS).choose(&mut self.rng).expect("events");
                let occurred = self.rng.random_bool(0.5);
                (
                    Fact::Event { event, count: 0 },
                    occurred,
                    format!("{event} occurred in both trials ."),
                    format!("no patient in either trial experienced {event} ."),
                )
            }
            Section::Results => unreachable!("results groups are single"),
        };
        let with_count = |f: &Fact, rng: &mut ChaCha8Rng| match f {
            Fact::Event { event, .. } => Fact::Event {
                event,
                count: if a_true { rng.random_range(1..=40) } else { 0 },
            },
            Fact::Intervention { drug, route, .. } => Fact::Intervention {
                drug,
                route,
                weeks: rng.random_range(1..=4),
            },
            other => other.clone(),
        };
        let f1 = with_count(&fact, &mut self.rng);
        let f2 = with_count(&fact, &mut self.rng);
        let i1 = primary.plant(section, f1, &mut self.rng);
        let i2 = secondary.plant(section, f2, &mut self.rng);
        debug_assert_eq!(primary.position(section, fact.key().expect("keyed")), Some(i1));
        let (entailed, contradicted) = if a_true { (a, b) } else { (b, a) };
        Pair { entailed, contradicted, primary_evidence: vec![i1], secondary_evidence: Some(vec![i2]) }
    }
}

/// Generates at least `n` labelled instances (rounded up to an even count,
/// two hypotheses per premise) and the trials they reference.
pub fn generate_synthetic(seed: u64, n: usize, cfg: &SyntheticConfig) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::Argument("synthetic corpus needs n >= 1".into()));
    }
    if cfg.min_sentences < 2 || cfg.max_sentences < cfg.min_sentences {
        return Err(Error::Argument(format!(
            "sentence range {}..={} is invalid (minimum 2)",
            cfg.min_sentences, cfg.max_sentences
        )));
    }
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
        trials: BTreeMap::new(),
        instances: Vec::with_capacity(n + 1),
        next_trial: 0,
    };
    for index in 0..n.div_ceil(2) {
        g.group(index);
    }
    Dataset::new(g.trials, g.instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(7, 100, &SyntheticConfig::default()).unwrap();
        let b = generate_synthetic(7, 100, &SyntheticConfig::default()).unwrap();
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
        let c = generate_synthetic(8, 100, &SyntheticConfig::default()).unwrap();
        assert_ne!(a.to_json_string().unwrap(), c.to_json_string().unwrap());
    }

    #[test]
    fn balanced_and_paired() {
        let ds = generate_synthetic(1, 200, &SyntheticConfig::default()).unwrap();
        assert_eq!(ds.instances.len(), 200);
        let pos = ds.instances.iter().filter(|i| i.label == Some(Label::Entailment)).count();
        let frac = pos as f64 / 200.0;
        assert!((0.45..=0.55).contains(&frac));
        for (_, members) in ds.hypothesis_groups() {
            assert_eq!(members.len(), 2);
            let labels: Vec<_> = members.iter().map(|u| ds.instance(u).unwrap().label).collect();
            assert_ne!(labels[0], labels[1]);
        }
    }

    #[test]
    fn rejects_zero() {
        assert!(generate_synthetic(1, 0, &SyntheticConfig::default()).is_err());
    }

    #[test]
    fn odd_counts_round_up() {
        let ds = generate_synthetic(1, 5, &SyntheticConfig::default()).unwrap();
        assert_eq!(ds.instances.len(), 6);
    }

    #[test]
    fn all_sections_and_kinds_occur() {
        let ds = generate_synthetic(3, 400, &SyntheticConfig::default()).unwrap();
        for s in Section::ALL {
            assert!(ds.instances.iter().any(|i| i.section == s), "{s}");
        }
        assert!(ds.instances.iter().any(|i| i.kind == InstanceKind::Comparison));
    }
}
