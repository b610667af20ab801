//! Per-class and macro F1, cross-validation over folds and seeds with
//! persisted per-run files, and the window sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    build_streams, split_folds, EncodedStream, Fold, LabelSet, Timeline, Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::{AblationFlags, Checkpoint, ModelConfig, Prepared, TempoFormer};
use crate::training::{class_counts, compute_alpha, predict_all, train, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
    pub macro_f1: f64,
}

/// Scores over `classes` classes. A class with `P + R = 0` scores 0 and still
/// counts towards the macro mean.
pub fn f1_scores(preds: &[usize], golds: &[usize], classes: usize) -> Result<ClassScores> {
    if preds.len() != golds.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if classes == 0 {
        return Err(Error::Data("no classes".into()));
    }
    let (mut tp, mut fp, mut fn_) = (vec![0usize; classes], vec![0usize; classes], vec![0usize; classes]);
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= classes || g >= classes {
            return Err(Error::IndexOutOfRange {
                what: "class",
                index: p.max(g),
                size: classes,
            });
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision: Vec<f64> = (0..classes).map(|c| ratio(tp[c], tp[c] + fp[c])).collect();
    let recall: Vec<f64> = (0..classes).map(|c| ratio(tp[c], tp[c] + fn_[c])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    let macro_f1 = f1.iter().sum::<f64>() / classes as f64;
    Ok(ClassScores {
        precision,
        recall,
        f1,
        support: (0..classes).map(|c| tp[c] + fn_[c]).collect(),
        macro_f1,
    })
}

/// Timelines of one fold.
pub struct FoldData<'a> {
    pub fold: usize,
    pub train: Vec<&'a Timeline>,
    pub dev: Vec<&'a Timeline>,
    pub test: Vec<&'a Timeline>,
}

impl<'a> FoldData<'a> {
    pub fn new(timelines: &'a [Timeline], index: usize, fold: &Fold) -> Self {
        let pick = |ids: &[String]| -> Vec<&'a Timeline> {
            timelines.iter().filter(|t| ids.contains(&t.timeline_id)).collect()
        };
        Self {
            fold: index,
            train: pick(&fold.train),
            dev: pick(&fold.dev),
            test: pick(&fold.test),
        }
    }
}

/// Test-set output of one (fold, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub preds: Vec<usize>,
    pub golds: Vec<usize>,
    pub dev_macro_f1: f64,
    pub best_epoch: usize,
}

/// Trains and tests one model per (fold, seed).
pub trait Runner {
    fn run(&self, data: &FoldData<'_>, seed: u64, run_dir: Option<&Path>) -> Result<RunOutput>;
}

/// Persisted record of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fold: usize,
    pub seed: u64,
    pub test_timelines: Vec<String>,
    pub preds: Vec<usize>,
    pub golds: Vec<usize>,
    pub test_macro_f1: f64,
    pub test_class_f1: Vec<f64>,
    pub dev_macro_f1: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub fold_macro_f1: Vec<f64>,
    /// Fold average of the test macro-F1.
    pub macro_f1: f64,
    pub class_f1: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub runs: Vec<RunRecord>,
    pub seeds: Vec<SeedSummary>,
    /// Mean and population standard deviation of the per-seed macro-F1.
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub class_f1: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Builds the report from run records, recomputing every score from the
/// stored predictions.
pub fn aggregate(classes: &[String], mut runs: Vec<RunRecord>) -> Result<MetricsReport> {
    runs.sort_by_key(|r| (r.seed, r.fold));
    let n = classes.len();
    for r in &mut runs {
        let s = f1_scores(&r.preds, &r.golds, n)?;
        r.test_macro_f1 = s.macro_f1;
        r.test_class_f1 = s.f1;
    }
    let mut seed_ids: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seed_ids.dedup();
    let seeds: Vec<SeedSummary> = seed_ids
        .iter()
        .map(|&seed| {
            let rs: Vec<&RunRecord> = runs.iter().filter(|r| r.seed == seed).collect();
            let fold_macro_f1: Vec<f64> = rs.iter().map(|r| r.test_macro_f1).collect();
            let class_f1 = (0..n)
                .map(|c| mean(&rs.iter().map(|r| r.test_class_f1[c]).collect::<Vec<_>>()))
                .collect();
            SeedSummary {
                seed,
                macro_f1: mean(&fold_macro_f1),
                fold_macro_f1,
                class_f1,
            }
        })
        .collect();
    let per_seed: Vec<f64> = seeds.iter().map(|s| s.macro_f1).collect();
    let m = mean(&per_seed);
    let var = mean(&per_seed.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>());
    let class_f1 = (0..n)
        .map(|c| mean(&seeds.iter().map(|s| s.class_f1[c]).collect::<Vec<_>>()))
        .collect();
    Ok(MetricsReport {
        classes: classes.to_vec(),
        runs,
        seeds,
        mean_macro_f1: m,
        std_macro_f1: var.sqrt(),
        class_f1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub dev_fraction: f64,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    /// Only the first `max_folds` folds are run when set.
    pub max_folds: Option<usize>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            dev_fraction: 0.25,
            split_seed: 0,
            seeds: vec![0, 1, 12, 123],
            max_folds: None,
        }
    }
}

pub fn run_file(dir: &Path, fold: usize, seed: u64) -> PathBuf {
    dir.join(format!("fold{fold}_seed{seed}.json"))
}

/// Reads every run record below `dir`.
pub fn load_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("fold"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?))
        .collect()
}

/// Trains and tests one run per (fold, seed). With `out_dir`, each run is
/// written to `out_dir/runs/` before aggregation and gets its own
/// subdirectory for checkpoints and history.
pub fn cross_validate(
    runner: &dyn Runner,
    timelines: &[Timeline],
    labels: &LabelSet,
    cv: &CvConfig,
    out_dir: Option<&Path>,
) -> Result<MetricsReport> {
    let folds = split_folds(timelines, cv.folds, cv.dev_fraction, cv.split_seed)?;
    let take = cv.max_folds.unwrap_or(folds.len()).min(folds.len());
    let runs_dir = out_dir.map(|d| d.join("runs"));
    if let Some(d) = &runs_dir {
        fs::create_dir_all(d)?;
    }
    let mut runs = Vec::new();
    for &seed in &cv.seeds {
        for (fi, fold) in folds.iter().take(take).enumerate() {
            let data = FoldData::new(timelines, fi, fold);
            let run_dir = runs_dir.as_ref().map(|d| d.join(format!("fold{fi}_seed{seed}")));
            if let Some(d) = &run_dir {
                fs::create_dir_all(d)?;
            }
            let out = runner.run(&data, seed, run_dir.as_deref())?;
            let scores = f1_scores(&out.preds, &out.golds, labels.len())?;
            let record = RunRecord {
                fold: fi,
                seed,
                test_timelines: data.test.iter().map(|t| t.timeline_id.clone()).collect(),
                preds: out.preds,
                golds: out.golds,
                test_macro_f1: scores.macro_f1,
                test_class_f1: scores.f1,
                dev_macro_f1: out.dev_macro_f1,
                best_epoch: out.best_epoch,
            };
            if let Some(d) = &runs_dir {
                let text = serde_json::to_string_pretty(&record)?;
                fs::write(run_file(d, fi, seed), text + "\n")?;
            }
            runs.push(record);
        }
    }
    aggregate(labels.names(), runs)
}

/// Everything needed to train and test TempoFormer on one fold.
#[derive(Clone, Debug)]
pub struct TempoFormerRunner {
    pub model: ModelConfig,
    pub flags: AblationFlags,
    pub train: TrainConfig,
    pub labels: LabelSet,
    /// Write the best checkpoint and the epoch history into the run directory.
    pub save_artifacts: bool,
}

/// Model-ready streams of a set of timelines.
pub fn prepare_timelines(
    model: &TempoFormer<f32>,
    timelines: &[&Timeline],
    vocab: &Vocabulary,
    labels: &LabelSet,
) -> Result<Vec<Prepared>> {
    let cfg = model.config();
    let mut out = Vec::new();
    for t in timelines {
        for s in build_streams(t, cfg.window) {
            let e: EncodedStream = s.encode(vocab, cfg.max_len, labels)?;
            out.push(model.prepare(&e)?);
        }
    }
    Ok(out)
}

/// Vocabulary over the texts of the given timelines only.
pub fn vocabulary_for(timelines: &[&Timeline]) -> Vocabulary {
    Vocabulary::build(
        timelines
            .iter()
            .flat_map(|t| t.posts.iter().map(|p| p.text.as_str())),
    )
}

impl TempoFormerRunner {
    /// Model for a seed with the vocabulary size filled in.
    pub fn model_for(&self, vocab: &Vocabulary, seed: u64) -> Result<TempoFormer<f32>> {
        let cfg = ModelConfig {
            vocab: vocab.len(),
            classes: self.labels.len(),
            init_seed: seed,
            ..self.model.clone()
        };
        TempoFormer::new(cfg, self.flags)
    }
}

/// A trained fold: the best snapshot with the vocabulary it was built on.
pub struct Fitted {
    pub outcome: TrainOutcome<f32>,
    pub vocab: Vocabulary,
    pub alpha: Vec<f64>,
}

impl TempoFormerRunner {
    /// Trains on `data.train`, early-stopping on `data.dev`.
    pub fn fit(
        &self,
        data: &FoldData<'_>,
        seed: u64,
        on_epoch: impl FnMut(&EpochRecord, &TempoFormer<f32>) -> Result<()>,
    ) -> Result<Fitted> {
        let vocab = vocabulary_for(&data.train);
        let model = self.model_for(&vocab, seed)?;
        let train_items = prepare_timelines(&model, &data.train, &vocab, &self.labels)?;
        let dev_items = prepare_timelines(&model, &data.dev, &vocab, &self.labels)?;
        let alpha = compute_alpha(&class_counts(&train_items, self.labels.len()), &self.labels)?;
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let outcome = train(model, &train_items, &dev_items, &alpha, &cfg, on_epoch)?;
        Ok(Fitted { outcome, vocab, alpha })
    }

    /// Predictions and gold labels of the best snapshot over `timelines`.
    pub fn score(&self, fitted: &Fitted, timelines: &[&Timeline]) -> Result<(Vec<usize>, Vec<usize>)> {
        let model = &fitted.outcome.best;
        let items = prepare_timelines(model, timelines, &fitted.vocab, &self.labels)?;
        let preds = predict_all(model, &items, self.train.eval_batch)?;
        Ok((preds, items.iter().map(|p| p.label).collect()))
    }
}

impl Runner for TempoFormerRunner {
    fn run(&self, data: &FoldData<'_>, seed: u64, run_dir: Option<&Path>) -> Result<RunOutput> {
        let fitted = self.fit(data, seed, |_, _| Ok(()))?;
        let outcome = &fitted.outcome;
        if let (true, Some(dir)) = (self.save_artifacts, run_dir) {
            let meta = serde_json::json!({
                "fold": data.fold,
                "seed": seed,
                "best_epoch": outcome.best_epoch,
                "dev_macro_f1": outcome.best_dev_f1,
            });
            Checkpoint::from_model(&outcome.best, &fitted.vocab, &self.labels, meta).save(dir.join("best.json"))?;
            write_history(&dir.join("history.jsonl"), &outcome.history)?;
        }
        let (preds, golds) = self.score(&fitted, &data.test)?;
        Ok(RunOutput {
            preds,
            golds,
            dev_macro_f1: outcome.best_dev_f1,
            best_epoch: outcome.best_epoch,
        })
    }
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in history {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Full cross-validation once per window size.
pub fn window_sweep(
    runner_for: &dyn Fn(usize) -> Box<dyn Runner>,
    windows: &[usize],
    timelines: &[Timeline],
    labels: &LabelSet,
    cv: &CvConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<(usize, MetricsReport)>> {
    windows
        .iter()
        .map(|&w| {
            let dir = out_dir.map(|d| d.join(format!("window{w}")));
            let report = cross_validate(runner_for(w).as_ref(), timelines, labels, cv, dir.as_deref())?;
            Ok((w, report))
        })
        .collect()
}

/// Aligned table with one row per labelled report: per-class F1, macro-F1
/// mean and the standard deviation across seeds.
pub fn render_table(title: &str, rows: &[(String, &MetricsReport)]) -> String {
    let mut out = String::new();
    let Some((_, first)) = rows.first() else {
        return out;
    };
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(title.len());
    let _ = write!(out, "{title:<name_w$}");
    for c in &first.classes {
        let _ = write!(out, "  {:>10}", c);
    }
    let _ = writeln!(out, "  {:>10}  {:>7}", "macro-F1", "std");
    for (name, r) in rows {
        let _ = write!(out, "{name:<name_w$}");
        for f in &r.class_f1 {
            let _ = write!(out, "  {:>10.4}", f);
        }
        let _ = writeln!(out, "  {:>10.4}  {:>7.4}", r.mean_macro_f1, r.std_macro_f1);
    }
    out
}
