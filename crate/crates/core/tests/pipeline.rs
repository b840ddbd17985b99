use trialnli::consistency::PairJudge;
use trialnli::corpus::{generate_synthetic, Dataset, PremiseView, SyntheticConfig, Tokenizer};
use trialnli::ensemble::{
    apply_joint_inference, checkpoint_predict, sweep_thresholds, threshold_grid, CheckpointMeta, DecisionThresholds,
    ModelName, TrainPreset, Warmup,
};
use trialnli::generative::{input_for, score_dataset, CharSeq2Seq, CharVocab, Seq2SeqConfig, StubScorer};
use trialnli::objectives::LossConfig;
use trialnli::training::mgnet::{corpus_texts, toy_architecture, FitOptions, MGNetModel};
use trialnli::training::{OptimSettings, OptimizerKind};
use trialnli::Task;

fn data() -> Dataset {
    generate_synthetic(21, 16, &SyntheticConfig::toy()).unwrap()
}

fn settings(epochs: usize) -> OptimSettings {
    OptimSettings {
        optimizer: OptimizerKind::Adam,
        lr_encoder: 3e-3,
        lr_other: 6e-3,
        batch_size: 4,
        epochs,
        warmup: Warmup::Ratio(0.1),
        clip_norm: 1.0,
        seed: 5,
    }
}

fn model(name: ModelName, ds: &Dataset) -> MGNetModel {
    let tok = Tokenizer::build(corpus_texts(&[ds]).iter().map(String::as_str), 1);
    let preset = TrainPreset::named("toy-taskA").unwrap();
    let (setup, enc, mg) = toy_architecture(name, &preset, LossConfig::default(), tok.vocab_size()).unwrap();
    MGNetModel::init(setup, enc, mg, tok, 2).unwrap()
}

#[test]
fn saved_checkpoints_predict_like_the_trained_model() {
    let ds = data();
    let dir = tempfile::tempdir().unwrap();
    for name in [ModelName::M512BiBiMul, ModelName::M512BiMax] {
        let mut m = model(name, &ds);
        let opts = FitOptions { settings: settings(2), keep: 1, thresholds: DecisionThresholds::default() };
        m.fit(&ds, Some(&ds), &opts).unwrap();
        let path = dir.path().join(name.as_str());
        m.save(&path).unwrap();
        let meta = CheckpointMeta {
            model: name.as_str().into(),
            fold: None,
            rank: 0,
            epoch: 0,
            metric: 0.0,
            path,
            task: name.task().unwrap(),
        };
        let direct = m.predict(&ds).unwrap();
        let loaded = checkpoint_predict(&meta, &ds).unwrap();
        assert_eq!(direct, loaded);
        match meta.task {
            Task::A => assert_eq!(loaded.task_a.len(), ds.instances.len()),
            Task::B => assert_eq!(loaded.task_b.len(), ds.instances.len()),
        }
    }
}

#[test]
fn toy_architecture_rejects_non_mgnet_names() {
    let preset = TrainPreset::named("toy-taskA").unwrap();
    assert!(toy_architecture(ModelName::Generative, &preset, LossConfig::default(), 10).is_err());
    assert!(toy_architecture(ModelName::Pairwise, &preset, LossConfig::default(), 10).is_err());
}

#[test]
fn generative_scorer_round_trips_and_normalises() {
    let ds = data();
    let texts: Vec<String> = ds.instances.iter().map(|i| input_for(i, &ds.trials).unwrap()).collect();
    let vocab = CharVocab::build(texts.iter().map(String::as_str));
    let mut m = CharSeq2Seq::init(Seq2SeqConfig::toy(), vocab, 3).unwrap();
    m.train(&ds, &settings(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let meta = CheckpointMeta {
        model: ModelName::Generative.as_str().into(),
        fold: None,
        rank: 0,
        epoch: 0,
        metric: 0.0,
        path: dir.path().to_path_buf(),
        task: Task::A,
    };
    let loaded = checkpoint_predict(&meta, &ds).unwrap();
    assert_eq!(loaded, score_dataset(&m, &ds).unwrap());
    for p in loaded.task_a.values() {
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn stub_scorer_gives_the_normalised_ratio() {
    let ds = data();
    let set = score_dataset(&StubScorer { p_ent: 0.3, p_con: 0.1 }, &ds).unwrap();
    for p in set.task_a.values() {
        assert!((p[1] - 0.75).abs() < 1e-12);
    }
}

/// Judges two hypotheses the same exactly when the texts are equal.
struct TextJudge;

impl PairJudge for TextJudge {
    fn same_label(&self, first: &str, second: &str, _premise: &PremiseView) -> trialnli::Result<f64> {
        Ok(if first == second { 1.0 } else { 0.0 })
    }
}

#[test]
fn joint_inference_makes_exclusive_pairs_disagree() {
    let ds = data();
    let set = score_dataset(&StubScorer { p_ent: 0.6, p_con: 0.4 }, &ds).unwrap();
    let out = apply_joint_inference(&set, &ds, &TextJudge).unwrap();
    assert_eq!(out.groups.len(), ds.instances.len() / 2);
    for g in &out.groups {
        assert_eq!(g.members.len(), 2);
        let a = out.predictions.task_a[&g.members[0]];
        let b = out.predictions.task_a[&g.members[1]];
        // both at 0.6 before; rectified against each other they meet at 0.5
        assert!((a[1] - 0.5).abs() < 1e-12 && (b[1] - 0.5).abs() < 1e-12);
    }
    let mut stray = set.clone();
    stray.task_a.insert("unknown".into(), [0.5, 0.5]);
    assert!(apply_joint_inference(&stray, &ds, &TextJudge).is_err());
}

#[test]
fn threshold_sweep_picks_a_grid_point_with_the_best_f1() {
    let ds = data();
    let mut set = score_dataset(&StubScorer { p_ent: 0.5, p_con: 0.5 }, &ds).unwrap();
    for inst in &ds.instances {
        let e = if inst.label.unwrap().as_target() == 1 { 0.8 } else { 0.3 };
        set.task_a.insert(inst.uuid.clone(), [1.0 - e, e]);
    }
    let grid = threshold_grid(0.05).unwrap();
    let sweep = sweep_thresholds(&set, &ds, &grid).unwrap();
    let best = sweep.task_a.iter().map(|p| p.f1).fold(0.0, f64::max);
    assert_eq!(best, 1.0);
    assert!(sweep.best.eta_a >= 0.3 && sweep.best.eta_a < 0.8);
}
