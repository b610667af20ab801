//! The `tempoformer` command line: corpus generation, training, evaluation,
//! window sweeps, ablations and gradient verification.
//!
//! Every experiment setting lives in one flat [`RunConfig`], read from an
//! optional `key = value` file and overridden by flags of the same name.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{generate_synthetic, parse_timelines, split_folds, write_timelines, GenConfig, LabelSet, Timeline};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate, cross_validate, f1_scores, prepare_timelines, render_table, window_sweep, write_history, CvConfig,
    FoldData, MetricsReport, RunRecord, Runner, TempoFormerRunner,
};
use crate::model::{AblationFlags, Checkpoint, ModelConfig, TimeMode, TimeTransform, Variant};
use crate::rotary::TimeAnchor;
use crate::tensor::op_gradient_suite;
use crate::training::{model_gradient_check, predict_all, TrainConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "TEMPOFORMER_OUT";
pub const CONFIG_FILE: &str = "config.conf";

/// Everything a training run depends on, as one flat record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,

    pub d: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub window: usize,
    pub local_layers: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub time_mode: TimeMode,
    pub time_anchor: TimeAnchor,
    pub time_transform: TimeTransform,
    pub variant: Variant,
    pub recurrent_hidden: usize,

    pub no_temporal_rope: bool,
    pub no_rope_mha: bool,
    pub no_stream_embed_s11: bool,
    pub no_stream_embed_s10_s11: bool,
    pub no_gate_norm: bool,

    pub epochs: usize,
    pub patience: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub accumulation: usize,
    pub weight_decay: f64,
    pub eval_batch: usize,

    pub folds: usize,
    pub dev_fraction: f64,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub max_folds: Option<usize>,
    /// Fold trained by `train`.
    pub fold: usize,
    /// Window sizes visited by `sweep`.
    pub windows: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let f = AblationFlags::default();
        let t = TrainConfig::default();
        let cv = CvConfig::default();
        Self {
            data: None,
            out_dir: None,
            d: m.d,
            heads: m.heads,
            d_ff: m.d_ff,
            max_len: m.max_len,
            window: m.window,
            local_layers: m.local_layers,
            head_hidden: m.head_hidden,
            dropout: m.dropout,
            time_mode: m.time_mode,
            time_anchor: m.time_anchor,
            time_transform: m.time_transform,
            variant: m.variant,
            recurrent_hidden: m.recurrent_hidden,
            no_temporal_rope: f.no_temporal_rope,
            no_rope_mha: f.no_rope_mha,
            no_stream_embed_s11: f.no_stream_embed_s11,
            no_stream_embed_s10_s11: f.no_stream_embed_s10_s11,
            no_gate_norm: f.no_gate_norm,
            epochs: t.epochs,
            patience: t.patience,
            gamma: t.gamma,
            lr: t.lr,
            batch_size: t.batch_size,
            accumulation: t.accumulation,
            weight_decay: t.weight_decay,
            eval_batch: t.eval_batch,
            folds: cv.folds,
            dev_fraction: cv.dev_fraction,
            split_seed: cv.split_seed,
            seeds: cv.seeds,
            max_folds: cv.max_folds,
            fold: 0,
            windows: vec![5, 10, 20],
        }
    }
}

impl RunConfig {
    /// File values first, then `overrides` on top. Unknown keys fail.
    pub fn resolve(file: Option<&Path>, overrides: Map<String, Value>) -> Result<Self> {
        let mut map = match file {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                crate::kv::parse_map(&text)?
            }
            None => Map::new(),
        };
        map.extend(overrides);
        let cfg: Self = crate::kv::from_map(map)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = crate::kv::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        crate::kv::render(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut m = self.model();
        m.vocab = 5;
        m.validate()?;
        self.train().validate()?;
        if self.folds < 2 || self.fold >= self.folds {
            return Err(Error::Config(format!(
                "fold {} must index one of {} folds (at least 2)",
                self.fold, self.folds
            )));
        }
        if self.windows.contains(&0) {
            return Err(Error::Config("windows must be positive".into()));
        }
        Ok(())
    }

    /// Model settings; `vocab`, `classes` and `init_seed` are filled per run.
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            heads: self.heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            window: self.window,
            local_layers: self.local_layers,
            head_hidden: self.head_hidden,
            dropout: self.dropout,
            time_mode: self.time_mode,
            time_anchor: self.time_anchor,
            time_transform: self.time_transform,
            variant: self.variant,
            recurrent_hidden: self.recurrent_hidden,
            ..ModelConfig::default()
        }
    }

    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            no_temporal_rope: self.no_temporal_rope,
            no_rope_mha: self.no_rope_mha,
            no_stream_embed_s11: self.no_stream_embed_s11,
            no_stream_embed_s10_s11: self.no_stream_embed_s10_s11,
            no_gate_norm: self.no_gate_norm,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            gamma: self.gamma,
            lr: self.lr,
            batch_size: self.batch_size,
            accumulation: self.accumulation,
            weight_decay: self.weight_decay,
            seed: self.seeds[0],
            eval_batch: self.eval_batch,
        }
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig {
            folds: self.folds,
            dev_fraction: self.dev_fraction,
            split_seed: self.split_seed,
            seeds: self.seeds.clone(),
            max_folds: self.max_folds,
        }
    }

    pub fn runner(&self, labels: &LabelSet, flags: AblationFlags) -> TempoFormerRunner {
        TempoFormerRunner {
            model: self.model(),
            flags,
            train: self.train(),
            labels: labels.clone(),
            save_artifacts: true,
        }
    }

    /// `out_dir`, else `$TEMPOFORMER_OUT`, else `runs`.
    pub fn out_root(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[derive(Parser, Debug)]
#[command(name = "tempoformer", version, about = "Time-aware hierarchical transformer for change detection in text streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus of timelines.
    Generate(GenerateArgs),
    /// Train on one fold and save the best checkpoint with its history.
    Train(RunArgs),
    /// Score a checkpoint on the dev or test timelines of its fold.
    Evaluate(EvaluateArgs),
    /// Cross-validate once per window size.
    Sweep(RunArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Cross-validate the full model and each single-component ablation.
    Ablate(RunArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Output corpus (one timeline per line).
    #[arg(long)]
    out: PathBuf,
    /// Generator settings as `key = value` lines.
    #[arg(long)]
    gen_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    timelines: Option<usize>,
    #[arg(long)]
    min_posts: Option<usize>,
    #[arg(long)]
    max_posts: Option<usize>,
    #[arg(long)]
    min_gap: Option<f64>,
    #[arg(long)]
    max_gap: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    fillers_per_post: Option<usize>,
    #[arg(long)]
    filler_vocab: Option<usize>,
    #[arg(long)]
    flip_prob: Option<f64>,
    #[arg(long)]
    positive_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run settings as `key = value` lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory name under the output root.
    #[arg(long)]
    name: Option<String>,
    #[command(flatten)]
    set: Overrides,
}

/// One flag per [`RunConfig`] key.
#[derive(Args, Debug, Default, Serialize)]
struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d_ff: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    local_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    head_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    /// temporal, positional or none
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    time_mode: Option<String>,
    /// first or current
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    time_anchor: Option<String>,
    /// log or identity
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    time_transform: Option<String>,
    /// tempoformer or rotempoformer
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    recurrent_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    no_temporal_rope: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    no_rope_mha: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    no_stream_embed_s11: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    no_stream_embed_s10_s11: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    no_gate_norm: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    accumulation: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    folds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dev_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split_seed: Option<u64>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_folds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    fold: Option<usize>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    windows: Option<Vec<usize>>,
    /// Shorthand for `--seeds <seed>`.
    #[arg(long, conflicts_with = "seeds")]
    #[serde(skip)]
    seed: Option<u64>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl Overrides {
    fn to_map(&self) -> Result<Map<String, Value>> {
        let Value::Object(mut map) = serde_json::to_value(self)? else {
            unreachable!("overrides serialize to an object");
        };
        if let Some(s) = self.seed {
            map.insert("seeds".into(), Value::from(vec![s]));
        }
        Ok(map)
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus; defaults to the one recorded at training time.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Write the report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Split {
    Dev,
    Test,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Streams in the checked batch.
    #[arg(long, default_value_t = 2)]
    streams: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Also check every graph operation on its own.
    #[arg(long)]
    ops: bool,
    /// tempoformer or rotempoformer
    #[arg(long, default_value = "tempoformer")]
    variant: String,
    #[arg(long)]
    no_temporal_rope: bool,
    #[arg(long)]
    no_rope_mha: bool,
    #[arg(long)]
    no_stream_embed_s11: bool,
    #[arg(long)]
    no_stream_embed_s10_s11: bool,
    #[arg(long)]
    no_gate_norm: bool,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs the command line and returns the process exit code: 0 on success,
/// 2 for usage errors (bad flags, paths or settings), 1 for failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("run `tempoformer --help` for usage");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn generate(a: GenerateArgs) -> CliResult<()> {
    let mut map = match &a.gen_config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
            crate::kv::parse_map(&text)?
        }
        None => Map::new(),
    };
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            map.insert(k.into(), v);
        }
    };
    put("timelines", a.timelines.map(Value::from));
    put("min_posts", a.min_posts.map(Value::from));
    put("max_posts", a.max_posts.map(Value::from));
    put("min_gap", a.min_gap.map(Value::from));
    put("max_gap", a.max_gap.map(Value::from));
    put("horizon", a.horizon.map(Value::from));
    put("fillers_per_post", a.fillers_per_post.map(Value::from));
    put("filler_vocab", a.filler_vocab.map(Value::from));
    put("flip_prob", a.flip_prob.map(Value::from));
    put("positive_rate", a.positive_rate.map(Value::from));
    let cfg: GenConfig = crate::kv::from_map(map)?;
    cfg.validate()?;
    let timelines = generate_synthetic(&cfg, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_timelines(&a.out, &timelines)?;
    let settings = a.out.with_extension("gen.conf");
    fs::write(&settings, format!("# seed = {}\n{}", a.seed, cfg.to_kv()))?;
    let posts: usize = timelines.iter().map(Timeline::len).sum();
    let switches = timelines
        .iter()
        .flat_map(|t| &t.posts)
        .filter(|p| p.label == crate::data::synthetic::LABEL_SWITCH)
        .count();
    println!(
        "wrote {} timelines, {posts} posts ({switches} switch) to {}",
        timelines.len(),
        a.out.display()
    );
    println!("settings in {}", settings.display());
    Ok(())
}

fn load_data(cfg: &RunConfig) -> CliResult<(Vec<Timeline>, LabelSet)> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Failure::Usage("no corpus given: set `data` or pass --data".into()))?;
    if !path.is_file() {
        return Err(Failure::Usage(format!("corpus {} does not exist", path.display())));
    }
    let timelines = parse_timelines(path)?;
    let labels = LabelSet::from_timelines(&timelines)?;
    Ok((timelines, labels))
}

fn run_dir(cfg: &RunConfig, command: &str, name: Option<String>) -> CliResult<PathBuf> {
    let name = name.unwrap_or_else(|| {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        format!("{command}-{t}")
    });
    let dir = cfg.out_root().join(name);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_kv())?;
    Ok(dir)
}

fn resolve(a: &RunArgs) -> CliResult<RunConfig> {
    if let Some(p) = &a.config {
        if !p.is_file() {
            return Err(Failure::Usage(format!("config {} does not exist", p.display())));
        }
    }
    Ok(RunConfig::resolve(a.config.as_deref(), a.set.to_map()?)?)
}

fn pick<'a>(timelines: &'a [Timeline], ids: &[String]) -> Vec<&'a Timeline> {
    timelines.iter().filter(|t| ids.contains(&t.timeline_id)).collect()
}

fn train_cmd(a: RunArgs) -> CliResult<()> {
    let cfg = resolve(&a)?;
    let (timelines, labels) = load_data(&cfg)?;
    let folds = split_folds(&timelines, cfg.folds, cfg.dev_fraction, cfg.split_seed)?;
    let fold = &folds[cfg.fold];
    let data = FoldData::new(&timelines, cfg.fold, fold);
    let dir = run_dir(&cfg, "train", a.name)?;
    let seed = cfg.seeds[0];
    let runner = cfg.runner(&labels, cfg.flags());
    println!(
        "training fold {} seed {seed}: {} train / {} dev / {} test timelines",
        cfg.fold,
        data.train.len(),
        data.dev.len(),
        data.test.len()
    );
    let fitted = runner.fit(&data, seed, |r, _| {
        println!(
            "epoch {:>3}  loss {:.5}  dev macro-F1 {:.4}{}",
            r.epoch,
            r.train_loss,
            r.dev_macro_f1,
            if r.improved { "  *" } else { "" }
        );
        Ok(())
    })?;
    let outcome = &fitted.outcome;
    let (preds, golds) = runner.score(&fitted, &data.test)?;
    let test = f1_scores(&preds, &golds, labels.len())?;
    let meta = serde_json::json!({
        "data": cfg.data,
        "fold": cfg.fold,
        "seed": seed,
        "best_epoch": outcome.best_epoch,
        "dev_macro_f1": outcome.best_dev_f1,
        "test_macro_f1": test.macro_f1,
        "eval_batch": cfg.eval_batch,
        "dev_timelines": fold.dev,
        "test_timelines": fold.test,
    });
    Checkpoint::from_model(&outcome.best, &fitted.vocab, &labels, meta.clone()).save(dir.join("best.json"))?;
    write_history(&dir.join("history.jsonl"), &outcome.history)?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    println!(
        "best epoch {}  dev macro-F1 {:.6}  test macro-F1 {:.6}",
        outcome.best_epoch, outcome.best_dev_f1, test.macro_f1
    );
    println!("run directory {}", dir.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult<()> {
    if !a.checkpoint.is_file() {
        return Err(Failure::Usage(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let meta = &ckpt.meta;
    let data = a
        .data
        .clone()
        .or_else(|| meta["data"].as_str().map(PathBuf::from))
        .ok_or_else(|| Failure::Usage("no corpus recorded in the checkpoint; pass --data".into()))?;
    if !data.is_file() {
        return Err(Failure::Usage(format!("corpus {} does not exist", data.display())));
    }
    let key = match a.split {
        Split::Dev => "dev_timelines",
        Split::Test => "test_timelines",
    };
    let ids: Vec<String> = serde_json::from_value(meta[key].clone())
        .map_err(|_| Failure::Usage(format!("checkpoint has no `{key}` record")))?;
    let timelines = parse_timelines(&data)?;
    let chosen = pick(&timelines, &ids);
    if chosen.len() != ids.len() {
        return Err(Failure::Runtime(Error::Data(format!(
            "{} of {} recorded timelines are missing from {}",
            ids.len() - chosen.len(),
            ids.len(),
            data.display()
        ))));
    }
    let model = ckpt.to_model::<f32>()?;
    let items = prepare_timelines(&model, &chosen, &ckpt.vocab, &ckpt.labels)?;
    let batch = meta["eval_batch"].as_u64().unwrap_or(64) as usize;
    let preds = predict_all(&model, &items, batch)?;
    let golds: Vec<usize> = items.iter().map(|p| p.label).collect();
    let scores = f1_scores(&preds, &golds, ckpt.labels.len())?;
    let record = RunRecord {
        fold: meta["fold"].as_u64().unwrap_or(0) as usize,
        seed: meta["seed"].as_u64().unwrap_or(0),
        test_timelines: ids,
        preds,
        golds,
        test_macro_f1: scores.macro_f1,
        test_class_f1: scores.f1,
        dev_macro_f1: meta["dev_macro_f1"].as_f64().unwrap_or(f64::NAN),
        best_epoch: meta["best_epoch"].as_u64().unwrap_or(0) as usize,
    };
    let report = aggregate(ckpt.labels.names(), vec![record])?;
    let title = format!("{:?} split", a.split).to_lowercase();
    print!("{}", render_table(&title, &[(a.checkpoint.display().to_string(), &report)]));
    println!("macro-F1 {:.6}", report.mean_macro_f1);
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

fn write_report(dir: &Path, report: &MetricsReport) -> CliResult<()> {
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

/// Copies the run configuration into every per-run subdirectory.
fn stamp_runs(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    let runs = dir.join("runs");
    for entry in fs::read_dir(&runs)? {
        let path = entry?.path();
        if path.is_dir() {
            fs::write(path.join(CONFIG_FILE), cfg.to_kv())?;
        }
    }
    Ok(())
}

fn sweep_cmd(a: RunArgs) -> CliResult<()> {
    let cfg = resolve(&a)?;
    let (timelines, labels) = load_data(&cfg)?;
    let dir = run_dir(&cfg, "sweep", a.name)?;
    let flags = cfg.flags();
    let make = |w: usize| -> Box<dyn Runner> {
        let mut runner = cfg.runner(&labels, flags);
        runner.model.window = w;
        Box::new(runner)
    };
    let rows = window_sweep(&make, &cfg.windows, &timelines, &labels, &cfg.cv(), Some(&dir))?;
    let mut named = Vec::new();
    for (w, report) in &rows {
        let sub = dir.join(format!("window{w}"));
        let run_cfg = RunConfig { window: *w, ..cfg.clone() };
        fs::write(sub.join(CONFIG_FILE), run_cfg.to_kv())?;
        stamp_runs(&sub, &run_cfg)?;
        write_report(&sub, report)?;
        named.push((format!("w={w}"), report));
    }
    let table = render_table("window", &named);
    fs::write(dir.join("table.txt"), &table)?;
    print!("{table}");
    println!("run directory {}", dir.display());
    Ok(())
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

fn ablate_cmd(a: RunArgs) -> CliResult<()> {
    let cfg = resolve(&a)?;
    let (timelines, labels) = load_data(&cfg)?;
    let dir = run_dir(&cfg, "ablate", a.name)?;
    let mut reports = Vec::new();
    for (name, flags) in AblationFlags::table() {
        let sub = dir.join(slug(name));
        let run_cfg = RunConfig {
            no_temporal_rope: flags.no_temporal_rope,
            no_rope_mha: flags.no_rope_mha,
            no_stream_embed_s11: flags.no_stream_embed_s11,
            no_stream_embed_s10_s11: flags.no_stream_embed_s10_s11,
            no_gate_norm: flags.no_gate_norm,
            ..cfg.clone()
        };
        println!("{name}");
        let report = cross_validate(&run_cfg.runner(&labels, flags), &timelines, &labels, &cfg.cv(), Some(&sub))?;
        fs::write(sub.join(CONFIG_FILE), run_cfg.to_kv())?;
        stamp_runs(&sub, &run_cfg)?;
        write_report(&sub, &report)?;
        println!("  macro-F1 {:.4} ± {:.4}", report.mean_macro_f1, report.std_macro_f1);
        reports.push((name.to_string(), report));
    }
    let named: Vec<(String, &MetricsReport)> = reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    let table = render_table("configuration", &named);
    fs::write(dir.join("table.txt"), &table)?;
    print!("{table}");
    println!("run directory {}", dir.display());
    Ok(())
}

/// Configuration used by `gradcheck`: d=8, two heads, w=3, K=6.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        d: 8,
        heads: 2,
        d_ff: 16,
        vocab: 12,
        max_len: 6,
        window: 3,
        local_layers: 1,
        head_hidden: 8,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn gradcheck_cmd(a: GradcheckArgs) -> CliResult<()> {
    let variant: Variant = serde_json::from_value(Value::String(a.variant.clone()))
        .map_err(|_| Failure::Usage(format!("unknown variant `{}`", a.variant)))?;
    if a.streams == 0 || a.eps.is_nan() || a.eps <= 0.0 {
        return Err(Failure::Usage("streams and eps must be positive".into()));
    }
    let flags = AblationFlags {
        no_temporal_rope: a.no_temporal_rope,
        no_rope_mha: a.no_rope_mha,
        no_stream_embed_s11: a.no_stream_embed_s11,
        no_stream_embed_s10_s11: a.no_stream_embed_s10_s11,
        no_gate_norm: a.no_gate_norm,
    };
    let mut worst: f64 = 0.0;
    if a.ops {
        for (name, r) in op_gradient_suite(a.seed, a.eps)? {
            println!("{name:<24} {:.3e}", r.max_relative_error);
            worst = worst.max(r.max_relative_error);
        }
    }
    let cfg = ModelConfig { variant, ..gradcheck_config() };
    let report = model_gradient_check(&cfg, flags, a.streams, a.seed, a.eps)?;
    println!(
        "full model: {} coordinates, max relative error {:.3e}",
        report.coordinates, report.max_relative_error
    );
    worst = worst.max(report.max_relative_error);
    if worst < a.tolerance {
        println!("max relative error {worst:.3e} < {:.0e}", a.tolerance);
        Ok(())
    } else {
        Err(Failure::Runtime(Error::Data(format!(
            "max relative error {worst:.3e} exceeds {:.0e}",
            a.tolerance
        ))))
    }
}
