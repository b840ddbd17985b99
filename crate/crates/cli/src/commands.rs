use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trialnli::consistency::{
    generate_pair_training_data, ConsistencyConfig, ConsistencyModel, IdentityParaphraser, PairDataset, Paraphraser,
    SynonymParaphraser,
};
use trialnli::corpus::{generate_synthetic, load_dataset, split_folds, Dataset, SyntheticConfig, Tokenizer};
use trialnli::encoder::{import_parameters, EncoderConfig};
use trialnli::ensemble::{
    apply_joint_inference, checkpoint_predict, soft_ensemble, train_cv, train_full, train_scorer_cv, CheckpointMeta,
    CvReport, DecisionThresholds, ModelName, PredictionFile, PredictionMeta, PredictionSet, RunCurve,
};
use trialnli::evaluation::{evaluate_predictions, render_table, EvaluationReport};
use trialnli::generative::{input_for, score_dataset, CharSeq2Seq, CharVocab, Seq2SeqConfig};
use trialnli::mgnet::TokenEncoderKind;
use trialnli::training::mgnet::{corpus_texts, toy_architecture, FitOptions, MGNetModel};
use trialnli::training::ENC;
use trialnli::Task;

use crate::config::{write_json, ResolvedRun, RunConfig};
use crate::UsageError;

/// Checkpoint index written by `train`.
pub const INDEX_FILE: &str = "checkpoints.json";
/// Resolved configuration written next to every run's outputs.
pub const RUN_CONFIG_FILE: &str = "run_config.json";
/// Directory of the consistency network inside a training output.
pub const PAIRWISE_DIR: &str = "pairwise";

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| UsageError(format!("missing {what} path")).into())
}

fn tokenizer_for(cfg: &RunConfig, texts: &[String]) -> Result<Tokenizer> {
    match &cfg.vocab {
        Some(p) => Tokenizer::load(p).with_context(|| format!("loading vocabulary {}", p.display())),
        None => Ok(Tokenizer::build(texts.iter().map(String::as_str), 1)),
    }
}

fn mgnet_template(cfg: &RunConfig, name: ModelName, tokenizer: &Tokenizer) -> Result<MGNetModel> {
    let preset = cfg.preset_for(name)?;
    let (mut setup, mut encoder, mut mgnet) = toy_architecture(name, &preset, cfg.loss.clone(), tokenizer.vocab_size())?;
    let imported = match &cfg.encoder_weights {
        Some(dir) => {
            let p = import_parameters(dir).with_context(|| format!("importing encoder {}", dir.display()))?;
            encoder = p.config.clone();
            mgnet.d = encoder.d;
            mgnet.sentence_heads = encoder.heads;
            mgnet.sentence_ff = 2 * encoder.d;
            Some(p)
        }
        None => None,
    };
    if let Some(m) = cfg.max_len {
        setup.max_len = m;
        encoder.max_positions = encoder.max_positions.max(m);
    }
    if !cfg.token_level {
        mgnet.token_encoder = TokenEncoderKind::None;
    }
    let mut model = MGNetModel::init(setup, encoder, mgnet, tokenizer.clone(), cfg.seed)?;
    if let Some(p) = imported {
        for (k, v) in p.store.iter() {
            model.store.insert(format!("{ENC}{k}"), v.clone());
        }
    }
    Ok(model)
}

fn train_mgnet(cfg: &RunConfig, name: ModelName, train: &Dataset, dev: Option<&Dataset>, tok: &Tokenizer) -> Result<CvReport> {
    let template = mgnet_template(cfg, name, tok)?;
    let opts = FitOptions { settings: cfg.optim_for(name)?, keep: 1, thresholds: cfg.thresholds };
    let out = &cfg.output;
    let mut report = CvReport::default();
    if let Some(k) = cfg.folds {
        let folds = split_folds(&train.instances, k, cfg.seed)?;
        report.merge(train_cv(&template, train, &folds, &opts, out)?);
        if name.task() == Some(Task::B) {
            match dev {
                Some(dev) => report.merge(train_full(&template, train, dev, &opts, out)?),
                None => log::warn!("{name}: no dev split, skipping the full-split checkpoint"),
            }
        }
    } else if let Some(dev) = dev {
        report.merge(train_full(&template, train, dev, &opts, out)?);
    } else {
        let mut model = template;
        let fit = model.fit(train, None, &opts)?;
        let path = out.join(format!("{name}-full-r0"));
        model.save(&path)?;
        report.checkpoints.push(CheckpointMeta {
            model: name.as_str().to_string(),
            fold: None,
            rank: 0,
            epoch: opts.settings.epochs - 1,
            metric: 0.0,
            path,
            task: model.setup.task,
        });
        report.curves.push(RunCurve { fold: None, epoch_loss: fit.epoch_loss, dev_f1: fit.dev_f1 });
    }
    Ok(report)
}

fn train_generative(cfg: &RunConfig, train: &Dataset, dev: Option<&Dataset>) -> Result<CvReport> {
    let mut texts = Vec::new();
    for ds in std::iter::once(train).chain(dev) {
        for inst in &ds.instances {
            texts.push(input_for(inst, &ds.trials)?);
        }
    }
    let vocab = CharVocab::build(texts.iter().map(String::as_str));
    let template = CharSeq2Seq::init(Seq2SeqConfig::toy(), vocab, cfg.seed)?;
    let settings = cfg.optim_for(ModelName::Generative)?;
    if let Some(k) = cfg.folds {
        let folds = split_folds(&train.instances, k, cfg.seed)?;
        return Ok(train_scorer_cv(&template, train, &folds, &settings, cfg.thresholds, &cfg.output)?);
    }
    let mut model = template;
    let fit = model.train(train, &settings)?;
    let metric = match dev {
        Some(dev) => {
            let meta = PredictionMeta { checkpoints: Vec::new(), thresholds: cfg.thresholds, joint: false };
            let set = score_dataset(&model, dev)?;
            evaluate_predictions(&PredictionFile::decide(&set, meta), dev)?.task_a.map_or(0.0, |r| r.f1)
        }
        None => 0.0,
    };
    let path = cfg.output.join("generative-full-r0");
    model.save(&path)?;
    Ok(CvReport {
        checkpoints: vec![CheckpointMeta {
            model: ModelName::Generative.as_str().to_string(),
            fold: None,
            rank: 0,
            epoch: settings.epochs - 1,
            metric,
            path,
            task: Task::A,
        }],
        failures: Vec::new(),
        curves: vec![RunCurve { fold: None, epoch_loss: fit.epoch_loss, dev_f1: dev.map(|_| vec![metric]).unwrap_or_default() }],
    })
}

/// Summary of a consistency-network run, stored in its directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct PairwiseSummary {
    pub pairs: usize,
    pub contradicting_pairs: usize,
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
    pub dev_accuracy: Option<f64>,
}

/// Every text the pair network's tokenizer must cover.
pub fn pair_texts(datasets: &[&Dataset], pairs: &[&PairDataset]) -> Vec<String> {
    let mut texts = corpus_texts(datasets);
    for d in pairs {
        texts.extend(d.pairs.iter().flat_map(|p| [p.first.clone(), p.second.clone()]));
    }
    texts
}

fn train_pairwise(cfg: &RunConfig, train: &Dataset, dev: Option<&Dataset>) -> Result<PairwiseSummary> {
    let para = SynonymParaphraser::default();
    let gen = generate_pair_training_data(train, &para)?;
    let contradicting_pairs = gen.contradicting_pairs;
    let data = PairDataset::new(train, gen.pairs)?;
    let dev_data = match dev {
        Some(d) => Some(PairDataset::new(d, generate_pair_training_data(d, &para)?.pairs)?),
        None => None,
    };
    let datasets: Vec<&Dataset> = std::iter::once(train).chain(dev).collect();
    let pair_sets: Vec<&PairDataset> = std::iter::once(&data).chain(dev_data.as_ref()).collect();
    let tok = tokenizer_for(cfg, &pair_texts(&datasets, &pair_sets))?;
    let max_len = cfg.max_len.unwrap_or(512);
    let encoder = EncoderConfig::toy(tok.vocab_size(), max_len);
    let mut model = ConsistencyModel::init(ConsistencyConfig { encoder, max_len }, tok, cfg.seed)?;
    let report = model.train(&data, &cfg.optim_for(ModelName::Pairwise)?)?;
    let dev_accuracy = dev_data.as_ref().map(|d| model.accuracy(d)).transpose()?;
    let dir = cfg.output.join(PAIRWISE_DIR);
    model.save(&dir)?;
    let summary = PairwiseSummary {
        pairs: data.pairs.len(),
        contradicting_pairs,
        epoch_loss: report.epoch_loss,
        train_accuracy: report.train_accuracy,
        dev_accuracy,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<CvReport> {
    cfg.validate()?;
    let models = cfg.models()?;
    let train = load(&require(&cfg.train, "training")?)?;
    let dev = cfg.dev.as_deref().map(load).transpose()?;
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let resolved = ResolvedRun {
        config: cfg.clone(),
        models: models.clone(),
        optim: models.iter().map(|&m| Ok((m, cfg.optim_for(m)?))).collect::<Result<_>>()?,
    };
    write_json(&cfg.output.join(RUN_CONFIG_FILE), &resolved)?;
    log::info!("resolved run: {}", serde_json::to_string(&resolved)?);

    let datasets: Vec<&Dataset> = std::iter::once(&train).chain(dev.as_ref()).collect();
    let tok = tokenizer_for(cfg, &corpus_texts(&datasets))?;
    let mut report = CvReport::default();
    for name in models {
        log::info!("training {name}");
        match name {
            ModelName::Pairwise => {
                let s = train_pairwise(cfg, &train, dev.as_ref())?;
                log::info!("pair network: train accuracy {:.3}", s.train_accuracy);
            }
            ModelName::Generative => report.merge(train_generative(cfg, &train, dev.as_ref())?),
            _ => report.merge(train_mgnet(cfg, name, &train, dev.as_ref(), &tok)?),
        }
    }
    for f in &report.failures {
        log::warn!("run {:?} failed: {}", f.fold, f.reason);
    }
    let index = cfg.output.join(INDEX_FILE);
    if index.exists() {
        let mut previous = CvReport::load(&index)?;
        let fresh: BTreeSet<&PathBuf> = report.checkpoints.iter().map(|c| &c.path).collect();
        previous.checkpoints.retain(|c| !fresh.contains(&c.path));
        previous.merge(report);
        report = previous;
    }
    report.save(&index)?;
    Ok(report)
}

/// Reads checkpoint indexes and checks that every checkpoint exists.
pub fn load_checkpoints(indexes: &[PathBuf]) -> Result<Vec<CheckpointMeta>> {
    let mut out = Vec::new();
    for idx in indexes {
        let r = CvReport::load(idx).with_context(|| format!("reading checkpoint index {}", idx.display()))?;
        for c in r.checkpoints {
            if !c.path.exists() {
                bail!("checkpoint {} listed in {} does not exist", c.path.display(), idx.display());
            }
            out.push(c);
        }
    }
    if out.is_empty() {
        return Err(UsageError("no checkpoints given".into()).into());
    }
    Ok(out)
}

fn predict_all(checkpoints: &[CheckpointMeta], data: &Dataset) -> Result<Vec<PredictionSet>> {
    checkpoints
        .iter()
        .map(|c| checkpoint_predict(c, data).with_context(|| format!("predicting with {}", c.path.display())))
        .collect()
}

#[derive(Clone, Debug)]
pub struct PredictArgs {
    pub checkpoints: Vec<PathBuf>,
    pub data: PathBuf,
    pub output: PathBuf,
    pub joint: Option<PathBuf>,
    pub thresholds: DecisionThresholds,
}

/// Per-checkpoint predictions averaged per task.
fn averaged(preds: &[(&CheckpointMeta, &PredictionSet)]) -> Result<PredictionSet> {
    let mut merged = PredictionSet { contributors: 0, ..Default::default() };
    for task in [Task::A, Task::B] {
        let sets: Vec<PredictionSet> = preds.iter().filter(|(c, _)| c.task == task).map(|(_, s)| (*s).clone()).collect();
        if sets.is_empty() {
            continue;
        }
        let avg = soft_ensemble(&sets)?;
        merged.task_a.extend(avg.task_a);
        merged.task_b.extend(avg.task_b);
        merged.contributors += avg.contributors;
    }
    Ok(merged)
}

fn finish(set: &PredictionSet, data: &Dataset, joint: Option<&ConsistencyModel>, meta: PredictionMeta) -> Result<PredictionFile> {
    let set = match joint {
        Some(net) if !set.task_a.is_empty() => apply_joint_inference(set, data, net)?.predictions,
        _ => set.clone(),
    };
    Ok(PredictionFile::decide(&set, meta))
}

fn load_joint(dir: &Option<PathBuf>) -> Result<Option<ConsistencyModel>> {
    dir.as_ref()
        .map(|d| ConsistencyModel::load(d).with_context(|| format!("loading consistency network {}", d.display())))
        .transpose()
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PredictionFile> {
    args.thresholds.validate().map_err(|e| UsageError(e.to_string()))?;
    let checkpoints = load_checkpoints(&args.checkpoints)?;
    let data = load(&args.data)?;
    let joint = load_joint(&args.joint)?;
    let preds = predict_all(&checkpoints, &data)?;
    let pairs: Vec<(&CheckpointMeta, &PredictionSet)> = checkpoints.iter().zip(&preds).collect();
    let meta = PredictionMeta {
        checkpoints: checkpoints.iter().map(|c| c.path.display().to_string()).collect(),
        thresholds: args.thresholds,
        joint: joint.is_some(),
    };
    let file = finish(&averaged(&pairs)?, &data, joint.as_ref(), meta)?;
    if let Some(dir) = args.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    file.save(&args.output)?;
    let run = serde_json::json!({
        "checkpoints": args.checkpoints,
        "data": args.data,
        "joint": args.joint,
        "thresholds": args.thresholds,
    });
    write_json(&args.output.with_extension("run.json"), &run)?;
    Ok(file)
}

pub fn cmd_evaluate(predictions: &Path, gold: &Path, output: Option<&Path>) -> Result<EvaluationReport> {
    let pred = PredictionFile::load(predictions).with_context(|| format!("reading predictions {}", predictions.display()))?;
    let gold = load(gold)?;
    let report = evaluate_predictions(&pred, &gold)?;
    if let Some(dir) = output {
        write_json(&dir.join("report.json"), &report)?;
        std::fs::write(dir.join("report.txt"), render_table(&report))?;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AblationRow {
    /// `original`, `- <model>` for a left-out model, or a variant label.
    pub name: String,
    pub task: Task,
    pub contributors: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// f1 minus the original ensemble's f1.
    pub delta_f1: f64,
}

#[derive(Clone, Debug)]
pub struct AblateArgs {
    pub checkpoints: Vec<PathBuf>,
    /// `(label, index)` pairs scored as whole alternative ensembles.
    pub variants: Vec<(String, PathBuf)>,
    pub data: PathBuf,
    pub output: Option<PathBuf>,
    pub joint: Option<PathBuf>,
    pub thresholds: DecisionThresholds,
}

fn score(set: &PredictionSet, data: &Dataset, joint: Option<&ConsistencyModel>, thresholds: DecisionThresholds) -> Result<EvaluationReport> {
    let meta = PredictionMeta { checkpoints: Vec::new(), thresholds, joint: joint.is_some() };
    Ok(evaluate_predictions(&finish(set, data, joint, meta)?, data)?)
}

fn rows_for(name: &str, report: &EvaluationReport, contributors: &BTreeMap<Task, usize>, base: &BTreeMap<Task, f64>) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for (task, r) in [(Task::A, &report.task_a), (Task::B, &report.task_b)] {
        if let Some(r) = r {
            rows.push(AblationRow {
                name: name.to_string(),
                task,
                contributors: contributors.get(&task).copied().unwrap_or(0),
                precision: r.precision,
                recall: r.recall,
                f1: r.f1,
                delta_f1: base.get(&task).map_or(0.0, |b| r.f1 - b),
            });
        }
    }
    rows
}

fn counts(checkpoints: &[&CheckpointMeta]) -> BTreeMap<Task, usize> {
    let mut m = BTreeMap::new();
    for c in checkpoints {
        *m.entry(c.task).or_insert(0) += 1;
    }
    m
}

/// Leave-one-model-out rows after the full ensemble, then one row per
/// variant ensemble.
pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    args.thresholds.validate().map_err(|e| UsageError(e.to_string()))?;
    let checkpoints = load_checkpoints(&args.checkpoints)?;
    if checkpoints.len() < 2 {
        return Err(UsageError(format!("ablation needs at least 2 contributors, got {}", checkpoints.len())).into());
    }
    let data = load(&args.data)?;
    let joint = load_joint(&args.joint)?;
    let preds = predict_all(&checkpoints, &data)?;
    let all: Vec<(&CheckpointMeta, &PredictionSet)> = checkpoints.iter().zip(&preds).collect();

    let original = score(&averaged(&all)?, &data, joint.as_ref(), args.thresholds)?;
    let mut base = BTreeMap::new();
    if let Some(r) = &original.task_a {
        base.insert(Task::A, r.f1);
    }
    if let Some(r) = &original.task_b {
        base.insert(Task::B, r.f1);
    }
    let metas: Vec<&CheckpointMeta> = checkpoints.iter().collect();
    let mut rows = rows_for("original", &original, &counts(&metas), &base);

    let families: BTreeSet<(Task, &str)> = checkpoints.iter().map(|c| (c.task, c.model.as_str())).collect();
    for &(task, family) in &families {
        let rest: Vec<(&CheckpointMeta, &PredictionSet)> =
            all.iter().copied().filter(|(c, _)| c.task == task && c.model != family).collect();
        if rest.is_empty() {
            continue;
        }
        let report = score(&averaged(&rest)?, &data, joint.as_ref(), args.thresholds)?;
        let metas: Vec<&CheckpointMeta> = rest.iter().map(|(c, _)| *c).collect();
        rows.extend(rows_for(&format!("- {family}"), &report, &counts(&metas), &base).into_iter().filter(|r| r.task == task));
    }

    for (label, index) in &args.variants {
        let vc = load_checkpoints(std::slice::from_ref(index))?;
        let vp = predict_all(&vc, &data)?;
        let pairs: Vec<(&CheckpointMeta, &PredictionSet)> = vc.iter().zip(&vp).collect();
        let report = score(&averaged(&pairs)?, &data, joint.as_ref(), args.thresholds)?;
        let metas: Vec<&CheckpointMeta> = vc.iter().collect();
        rows.extend(rows_for(label, &report, &counts(&metas), &base));
    }
    if let Some(out) = &args.output {
        write_json(out, &rows)?;
    }
    Ok(rows)
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<28}{:>6}{:>6}{:>8}{:>8}{:>8}{:>8}\n", "ensemble", "task", "n", "P", "R", "F1", "dF1");
    for r in rows {
        let task = if r.task == Task::A { "A" } else { "B" };
        out.push_str(&format!(
            "{:<28}{:>6}{:>6}{:>8.3}{:>8.3}{:>8.3}{:>+8.3}\n",
            r.name, task, r.contributors, r.precision, r.recall, r.f1, r.delta_f1
        ));
    }
    out
}

pub fn cmd_synth(n: usize, seed: u64, config: &SyntheticConfig, output: &Path) -> Result<Dataset> {
    let ds = generate_synthetic(seed, n, config)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ds.save(output)?;
    Ok(ds)
}

pub fn cmd_pairgen(data: &Path, output: &Path, identity: bool) -> Result<(usize, usize, usize)> {
    let ds = load(data)?;
    let para: &dyn Paraphraser = if identity { &IdentityParaphraser } else { &SynonymParaphraser::default() };
    let gen = generate_pair_training_data(&ds, para)?;
    let counts = (gen.contradicting_pairs, gen.failures, gen.pairs.len());
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    PairDataset::new(&ds, gen.pairs)?.save(output)?;
    Ok(counts)
}
