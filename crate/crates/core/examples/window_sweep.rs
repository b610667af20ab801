//! Macro-F1 as a function of the stream window size.

use tempoformer::benchmark;
use tempoformer::data::{generate_synthetic, GenConfig, LabelSet};
use tempoformer::evaluation::{render_table, window_sweep, CvConfig, Runner, TempoFormerRunner};
use tempoformer::model::{AblationFlags, ModelConfig};
use tempoformer::training::TrainConfig;

fn main() -> tempoformer::Result<()> {
    let timelines = generate_synthetic(&GenConfig { timelines: 60, ..benchmark::corpus_config() }, 7)?;
    let labels = LabelSet::from_timelines(&timelines)?;
    let make = |window: usize| -> Box<dyn Runner> {
        Box::new(TempoFormerRunner {
            model: ModelConfig { window, ..benchmark::model_config() },
            flags: AblationFlags::default(),
            train: TrainConfig { epochs: 5, ..benchmark::train_config() },
            labels: labels.clone(),
            save_artifacts: false,
        })
    };
    let cv = CvConfig { seeds: vec![0], max_folds: Some(2), ..CvConfig::default() };
    let rows = window_sweep(&make, &[1, 3, 10], &timelines, &labels, &cv, None)?;
    let named: Vec<(String, _)> = rows.iter().map(|(w, r)| (format!("w={w}"), r)).collect();
    print!("{}", render_table("window", &named));
    Ok(())
}
