use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PredictionSet;
use crate::consistency::{build_agreement_matrix, pair_premise, rectify, AgreementMatrix, PairJudge};
use crate::corpus::{Dataset, PremiseKey};
use crate::error::{Error, Result};

/// Agreement decided for one hypothesis group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAgreement {
    pub key: PremiseKey,
    /// Member uuids in matrix order.
    pub members: Vec<String>,
    pub agreement: AgreementMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointOutcome {
    /// Task A probabilities after rectification; Task B scores untouched.
    pub predictions: PredictionSet,
    /// Groups with at least two predicted members.
    pub groups: Vec<GroupAgreement>,
}

/// Rectifies the Task A probabilities of every hypothesis group in `dataset`
/// with agreement judged by `judge`. Groups of one pass through unchanged.
/// Group members without a prediction are left out of their group.
pub fn apply_joint_inference(set: &PredictionSet, dataset: &Dataset, judge: &dyn PairJudge) -> Result<JointOutcome> {
    let known: BTreeSet<&str> = dataset.instances.iter().map(|i| i.uuid.as_str()).collect();
    if let Some(stray) = set.task_a.keys().find(|k| !known.contains(k.as_str())) {
        return Err(Error::Alignment { key: stray.clone() });
    }
    let groups: Vec<(PremiseKey, Vec<String>)> = dataset
        .hypothesis_groups()
        .into_iter()
        .map(|(key, members)| (key, members.into_iter().filter(|u| set.task_a.contains_key(u)).collect::<Vec<_>>()))
        .filter(|(_, members)| members.len() >= 2)
        .collect();

    let solved: Vec<(GroupAgreement, Vec<[f64; 2]>)> = groups
        .into_par_iter()
        .map(|(key, members)| {
            let premise = pair_premise(&key, &dataset.trials)?;
            let hyps: Vec<&str> = members
                .iter()
                .map(|u| dataset.instance(u).map(|i| i.hypothesis.as_str()).ok_or_else(|| Error::Alignment { key: u.clone() }))
                .collect::<Result<_>>()?;
            let agreement = build_agreement_matrix(&hyps, &premise, judge)?;
            let preds: Vec<[f64; 2]> = members.iter().map(|u| set.task_a[u]).collect();
            let fixed = rectify(&preds, &agreement)?;
            Ok((GroupAgreement { key, members, agreement }, fixed))
        })
        .collect::<Result<_>>()?;

    let mut predictions = set.clone();
    let mut groups = Vec::with_capacity(solved.len());
    for (group, fixed) in solved {
        for (u, p) in group.members.iter().zip(fixed) {
            predictions.task_a.insert(u.clone(), p);
        }
        groups.push(group);
    }
    Ok(JointOutcome { predictions, groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, PremiseView, SyntheticConfig};

    struct Fixed(f64);
    impl PairJudge for Fixed {
        fn same_label(&self, _: &str, _: &str, _: &PremiseView) -> Result<f64> {
            Ok(self.0)
        }
    }

    fn predictions(ds: &Dataset) -> PredictionSet {
        let mut set = PredictionSet { contributors: 1, ..Default::default() };
        for (i, inst) in ds.instances.iter().enumerate() {
            let p = 0.6 + 0.05 * (i % 3) as f64;
            set.task_a.insert(inst.uuid.clone(), [1.0 - p, p]);
        }
        set
    }

    #[test]
    fn exclusive_pairs_split_at_half() {
        let ds = generate_synthetic(4, 12, &SyntheticConfig::default()).unwrap();
        let set = predictions(&ds);
        let out = apply_joint_inference(&set, &ds, &Fixed(0.1)).unwrap();
        assert_eq!(out.groups.len(), ds.instances.len() / 2);
        for g in &out.groups {
            let a = out.predictions.task_a[&g.members[0]][1];
            let b = out.predictions.task_a[&g.members[1]][1];
            let (pa, pb) = (set.task_a[&g.members[0]][1], set.task_a[&g.members[1]][1]);
            if pa != pb {
                assert!((a > 0.5) != (b > 0.5), "{a} {b}");
            }
            assert!((a + out.predictions.task_a[&g.members[0]][0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn agreeing_pairs_average() {
        let ds = generate_synthetic(4, 2, &SyntheticConfig::default()).unwrap();
        let set = predictions(&ds);
        let out = apply_joint_inference(&set, &ds, &Fixed(0.9)).unwrap();
        let mean = (set.task_a[&ds.instances[0].uuid][1] + set.task_a[&ds.instances[1].uuid][1]) / 2.0;
        for inst in &ds.instances {
            assert!((out.predictions.task_a[&inst.uuid][1] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn singletons_pass_through_and_strays_are_rejected() {
        let ds = generate_synthetic(4, 6, &SyntheticConfig::default()).unwrap();
        let mut set = predictions(&ds);
        set.task_a.remove(&ds.instances[0].uuid);
        let out = apply_joint_inference(&set, &ds, &Fixed(0.1)).unwrap();
        let partner = ds.instances.iter().find(|i| i.uuid != ds.instances[0].uuid && PremiseKey::of(i) == PremiseKey::of(&ds.instances[0])).unwrap();
        assert_eq!(out.predictions.task_a[&partner.uuid], set.task_a[&partner.uuid]);
        set.task_a.insert("nope".into(), [0.5, 0.5]);
        assert!(matches!(apply_joint_inference(&set, &ds, &Fixed(0.1)), Err(Error::Alignment { .. })));
    }
}
