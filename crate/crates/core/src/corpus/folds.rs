use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Instance, Label};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, uuid: &str) -> Option<usize> {
        self.assignment.get(uuid).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(u, _)| u.as_str())
            .collect()
    }
}

/// Label-stratified k-fold assignment. Instances are shuffled within each
/// label stratum, the strata are laid end to end and folds are dealt
/// round-robin, so fold sizes differ by at most one.
pub fn split_folds(instances: &[Instance], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Argument(format!("fold count must be at least 2, got {k}")));
    }
    if k > instances.len() {
        return Err(Error::Argument(format!(
            "fold count {k} exceeds the number of instances ({})",
            instances.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: BTreeMap<Option<Label>, Vec<&str>> = BTreeMap::new();
    for inst in instances {
        strata.entry(inst.label).or_default().push(&inst.uuid);
    }
    let mut order = Vec::with_capacity(instances.len());
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        order.extend(members.iter().copied());
    }
    let mut assignment = BTreeMap::new();
    for (i, uuid) in order.into_iter().enumerate() {
        if assignment.insert(uuid.to_string(), i % k).is_some() {
            return Err(Error::Validation(format!("duplicate uuid {uuid}")));
        }
    }
    Ok(FoldPlan { k, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InstanceKind, Section};
    use proptest::prelude::*;

    fn instances(n: usize) -> Vec<Instance> {
        (0..n)
            .map(|i| Instance {
                uuid: format!("u{i:05}"),
                kind: InstanceKind::Single,
                section: Section::Results,
                hypothesis: "h".into(),
                primary_trial_id: "T".into(),
                secondary_trial_id: None,
                label: Some(if i % 3 == 0 { Label::Entailment } else { Label::Contradiction }),
                primary_evidence: None,
                secondary_evidence: None,
            })
            .collect()
    }

    #[test]
    fn nineteen_hundred_into_ten() {
        let plan = split_folds(&instances(1900), 10, 3).unwrap();
        assert_eq!(plan.fold_sizes(), vec![190; 10]);
    }

    #[test]
    fn one_per_fold_at_boundary() {
        let plan = split_folds(&instances(10), 10, 3).unwrap();
        assert_eq!(plan.fold_sizes(), vec![1; 10]);
    }

    #[test]
    fn deterministic() {
        let a = split_folds(&instances(57), 5, 11).unwrap();
        let b = split_folds(&instances(57), 5, 11).unwrap();
        assert_eq!(a, b);
        let c = split_folds(&instances(57), 5, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_k() {
        assert!(split_folds(&instances(3), 4, 0).is_err());
        assert!(split_folds(&instances(3), 1, 0).is_err());
    }

    #[test]
    fn stratified() {
        let plan = split_folds(&instances(300), 10, 1).unwrap();
        let insts = instances(300);
        for f in 0..10 {
            let pos = insts
                .iter()
                .filter(|i| plan.fold_of(&i.uuid) == Some(f) && i.label == Some(Label::Entailment))
                .count();
            assert_eq!(pos, 10);
        }
    }

    proptest! {
        #[test]
        fn partitions_every_uuid(n in 2usize..120, k in 2usize..12, seed in 0u64..1000) {
            prop_assume!(k <= n);
            let insts = instances(n);
            let plan = split_folds(&insts, k, seed).unwrap();
            prop_assert_eq!(plan.assignment.len(), n);
            for i in &insts {
                prop_assert!(plan.fold_of(&i.uuid).unwrap() < k);
            }
            let sizes = plan.fold_sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }
}
