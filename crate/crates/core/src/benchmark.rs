//! The synthetic temporal benchmark: full TempoFormer against its positional
//! ablation on a corpus whose labels depend on elapsed time.

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, GenConfig, LabelSet};
use crate::error::Result;
use crate::evaluation::{cross_validate, CvConfig, MetricsReport, TempoFormerRunner};
use crate::model::{AblationFlags, ModelConfig};
use crate::rotary::TimeAnchor;
use crate::training::TrainConfig;

pub const CORPUS_SEED: u64 = 7;

/// 200 timelines of 10–25 posts with one polarity word each, mostly positive.
pub fn corpus_config() -> GenConfig {
    GenConfig {
        timelines: 200,
        min_posts: 10,
        max_posts: 25,
        fillers_per_post: 0,
        positive_rate: 0.8,
        ..GenConfig::default()
    }
}

pub fn model_config() -> ModelConfig {
    ModelConfig {
        d: 16,
        heads: 2,
        d_ff: 32,
        max_len: 3,
        window: 10,
        local_layers: 1,
        head_hidden: 64,
        dropout: 0.0,
        time_anchor: TimeAnchor::Current,
        ..ModelConfig::default()
    }
}

pub fn train_config() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        patience: 20,
        lr: 3e-3,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub temporal: MetricsReport,
    pub positional: MetricsReport,
    pub seconds: f64,
}

impl BenchmarkResult {
    pub fn margin(&self) -> f64 {
        self.temporal.mean_macro_f1 - self.positional.mean_macro_f1
    }
}

/// Cross-validates both configurations with the same folds and seeds.
pub fn run(cv: &CvConfig) -> Result<BenchmarkResult> {
    let start = std::time::Instant::now();
    let timelines = generate_synthetic(&corpus_config(), CORPUS_SEED)?;
    let labels = LabelSet::from_timelines(&timelines)?;
    let runner = |flags| TempoFormerRunner {
        model: model_config(),
        flags,
        train: train_config(),
        labels: labels.clone(),
        save_artifacts: false,
    };
    let temporal = cross_validate(&runner(AblationFlags::default()), &timelines, &labels, cv, None)?;
    let positional = cross_validate(
        &runner(AblationFlags {
            no_temporal_rope: true,
            ..AblationFlags::default()
        }),
        &timelines,
        &labels,
        cv,
        None,
    )?;
    Ok(BenchmarkResult {
        temporal,
        positional,
        seconds: start.elapsed().as_secs_f64(),
    })
}
