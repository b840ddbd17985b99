use std::collections::BTreeMap;

use proptest::prelude::*;
use trialnli::consistency::{generate_pair_training_data, IdentityParaphraser, PairDataset, PairLabel, SynonymParaphraser};
use trialnli::corpus::{generate_synthetic, load_dataset, Label, SyntheticConfig};
use trialnli::encoder::{embed_and_encode, extend_positions, EncoderConfig, EncoderParams};
use trialnli::corpus::TokenSequence;

fn config(toy: bool) -> SyntheticConfig {
    if toy {
        SyntheticConfig::toy()
    } else {
        SyntheticConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_labels_are_balanced_and_seeded(seed in 0u64..10_000, half in 1usize..40, toy in any::<bool>()) {
        let cfg = config(toy);
        let ds = generate_synthetic(seed, 2 * half, &cfg).unwrap();
        prop_assert_eq!(ds.instances.len(), 2 * half);
        let ent = ds.instances.iter().filter(|i| i.label == Some(Label::Entailment)).count();
        prop_assert_eq!(ent, half);
        prop_assert_eq!(&generate_synthetic(seed, 2 * half, &cfg).unwrap(), &ds);
        ds.validate().unwrap();
    }

    #[test]
    fn every_contradicting_pair_yields_two_same_two_different(seed in 0u64..10_000, half in 1usize..30, toy in any::<bool>()) {
        let ds = generate_synthetic(seed, 2 * half, &config(toy)).unwrap();
        let gen = generate_pair_training_data(&ds, &SynonymParaphraser::default()).unwrap();
        prop_assert_eq!(gen.failures, 0);
        prop_assert_eq!(gen.contradicting_pairs, half);
        prop_assert_eq!(gen.pairs.len(), 4 * half);
        let mut by_pair: BTreeMap<&str, Vec<PairLabel>> = BTreeMap::new();
        for p in &gen.pairs {
            by_pair.entry(p.id.rsplit_once('/').unwrap().0).or_default().push(p.label);
        }
        for labels in by_pair.values() {
            prop_assert_eq!(labels.len(), 4);
            prop_assert_eq!(labels.iter().filter(|&&l| l == PairLabel::Same).count(), 2);
        }
    }
}

#[test]
fn dataset_and_pair_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(3, 20, &SyntheticConfig::default()).unwrap();
    let path = dir.path().join("data.json");
    ds.save(&path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);

    let gen = generate_pair_training_data(&ds, &IdentityParaphraser).unwrap();
    let pairs = PairDataset::new(&ds, gen.pairs).unwrap();
    let pair_path = dir.path().join("pairs.json");
    pairs.save(&pair_path).unwrap();
    assert_eq!(PairDataset::load(&pair_path).unwrap(), pairs);
}

#[test]
fn identity_paraphrases_repeat_the_hypothesis() {
    let ds = generate_synthetic(5, 10, &SyntheticConfig::toy()).unwrap();
    let gen = generate_pair_training_data(&ds, &IdentityParaphraser).unwrap();
    for p in gen.pairs.iter().filter(|p| p.label == PairLabel::Same) {
        assert_eq!(p.first, p.second);
    }
    for p in gen.pairs.iter().filter(|p| p.label == PairLabel::Different) {
        assert_ne!(p.first, p.second);
    }
}

fn sequence(n: usize) -> TokenSequence {
    let mut token_ids = vec![2u32];
    token_ids.extend((0..n - 2).map(|i| 4 + (i * 7 % 30) as u32));
    token_ids.push(3);
    let cut = n / 3;
    TokenSequence {
        token_ids,
        type_ids: (0..n).map(|i| u8::from(i > cut)).collect(),
        spans: vec![1..cut.max(2), cut + 1..n - 1],
        truncated: vec![false],
        leading_segments: 1,
    }
}

#[test]
fn position_extension_keeps_old_rows_and_prefix_outputs() {
    let cfg = EncoderConfig { d: 16, ff: 32, dropout: 0.0, ..EncoderConfig::toy(40, 64) };
    let before = EncoderParams::init(cfg, 1).unwrap();
    let after = extend_positions(&before, 128, 2).unwrap();
    assert_eq!(after.max_positions(), 128);
    let old = before.store.get("pos_emb").unwrap();
    let new = after.store.get("pos_emb").unwrap();
    assert_eq!(new.nrows(), 128);
    for ((i, j), v) in old.indexed_iter() {
        assert_eq!(v.to_bits(), new[[i, j]].to_bits());
    }
    for n in [3, 20, 64] {
        let s = sequence(n);
        assert_eq!(embed_and_encode(&s, &before).unwrap(), embed_and_encode(&s, &after).unwrap());
    }
    assert!(embed_and_encode(&sequence(100), &before).is_err());
    assert_eq!(embed_and_encode(&sequence(100), &after).unwrap().nrows(), 100);
    assert!(extend_positions(&before, 64, 0).is_err());
}
