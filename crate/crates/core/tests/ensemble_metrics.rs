use std::collections::BTreeMap;

use proptest::prelude::*;
use trialnli::ensemble::{decide_task_b, plan_checkpoints, soft_ensemble, EvidenceScores, ModelName, PredictionSet};
use trialnli::evaluation::micro_prf;
use trialnli::Task;

/// Per-item confusion counting, independent of the library.
fn brute_force(pred: &[bool], gold: &[bool]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

fn set_from(entries: &[(f64, Vec<f64>)]) -> PredictionSet {
    let mut s = PredictionSet { contributors: 1, ..Default::default() };
    for (k, (e, ev)) in entries.iter().enumerate() {
        s.task_a.insert(format!("u{k}"), [1.0 - e, *e]);
        s.task_b.insert(format!("u{k}"), EvidenceScores { primary: ev.clone(), secondary: None });
    }
    s
}

fn entries(keys: usize) -> impl Strategy<Value = Vec<(f64, Vec<f64>)>> {
    prop::collection::vec((0.0f64..=1.0, prop::collection::vec(0.0f64..=1.0, 3)), keys)
}

proptest! {
    #[test]
    fn micro_prf_matches_item_counts(items in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let pred: BTreeMap<usize, bool> = items.iter().enumerate().map(|(k, &(p, _))| (k, p)).collect();
        let gold: BTreeMap<usize, bool> = items.iter().enumerate().map(|(k, &(_, g))| (k, g)).collect();
        let (ps, gs): (Vec<bool>, Vec<bool>) = items.iter().copied().unzip();
        let (tp, fp, fn_, tn) = brute_force(&ps, &gs);
        let r = micro_prf(&pred, &gold).unwrap();
        prop_assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_, r.counts.tn), (tp, fp, fn_, tn));
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        prop_assert!((r.f1 - f1).abs() < 1e-12);
    }

    #[test]
    fn identical_contributors_average_to_themselves(e in entries(6), k in 1usize..8) {
        let one = set_from(&e);
        let avg = soft_ensemble(&vec![one.clone(); k]).unwrap();
        prop_assert_eq!(&avg.task_a, &one.task_a);
        prop_assert_eq!(&avg.task_b, &one.task_b);
        prop_assert_eq!(avg.contributors, k);
    }

    #[test]
    fn average_is_bounded_and_order_free(sets in prop::collection::vec(entries(4), 2..6)) {
        let sets: Vec<PredictionSet> = sets.iter().map(|e| set_from(e)).collect();
        let avg = soft_ensemble(&sets).unwrap();
        let mut reversed = sets.clone();
        reversed.reverse();
        prop_assert_eq!(&soft_ensemble(&reversed).unwrap(), &avg);
        for (u, p) in &avg.task_a {
            let col: Vec<f64> = sets.iter().map(|s| s.task_a[u][1]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= p[1] && p[1] <= hi);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            prop_assert!((p[1] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn evidence_selection_is_strict(scores in prop::collection::vec(0.0f64..=1.0, 0..20), eta in 0.01f64..0.99) {
        let picked = decide_task_b(&scores, eta);
        for (i, &s) in scores.iter().enumerate() {
            prop_assert_eq!(picked.contains(&i), s > eta);
        }
    }

    #[test]
    fn plan_size_follows_keep_rule(k in 2usize..15) {
        let a = plan_checkpoints(&ModelName::TASK_A, k).unwrap();
        let b = plan_checkpoints(&ModelName::TASK_B, k).unwrap();
        prop_assert_eq!(a.len(), ModelName::TASK_A.len() * k);
        prop_assert_eq!(b.len(), ModelName::TASK_B.len() * (2 * k + 1));
        prop_assert!(b.iter().filter(|c| c.fold.is_none()).all(|c| c.rank == 0));
    }
}

#[test]
fn ten_fold_plan_totals() {
    assert_eq!(plan_checkpoints(&ModelName::TASK_A, 10).unwrap().len(), 40);
    assert_eq!(plan_checkpoints(&ModelName::TASK_B, 10).unwrap().len(), 63);
    assert!(plan_checkpoints(&[ModelName::Pairwise], 10).is_err());
    for m in ModelName::TASK_B {
        assert_eq!(m.task(), Some(Task::B));
    }
}

#[test]
fn misaligned_sets_are_rejected() {
    let a = set_from(&[(0.2, vec![0.1, 0.2, 0.3])]);
    let mut b = a.clone();
    b.task_a.insert("extra".into(), [0.5, 0.5]);
    assert!(soft_ensemble(&[a.clone(), b]).is_err());
    let mut c = a.clone();
    c.task_b.get_mut("u0").unwrap().primary.pop();
    assert!(soft_ensemble(&[a, c]).is_err());
    assert!(soft_ensemble(&[]).is_err());
}

#[test]
fn micro_prf_rejects_key_mismatch() {
    let pred = BTreeMap::from([(1, true)]);
    let gold = BTreeMap::from([(2, true)]);
    assert!(micro_prf(&pred, &gold).is_err());
}
