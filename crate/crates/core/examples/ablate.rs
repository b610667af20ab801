//! The full model against each single-component ablation.

use tempoformer::benchmark;
use tempoformer::data::{generate_synthetic, GenConfig, LabelSet};
use tempoformer::evaluation::{cross_validate, render_table, CvConfig, TempoFormerRunner};
use tempoformer::model::{AblationFlags, ModelConfig, TempoFormer};
use tempoformer::training::TrainConfig;

fn main() -> tempoformer::Result<()> {
    let timelines = generate_synthetic(&GenConfig { timelines: 60, ..benchmark::corpus_config() }, 7)?;
    let labels = LabelSet::from_timelines(&timelines)?;
    let cv = CvConfig { seeds: vec![0], max_folds: Some(2), ..CvConfig::default() };
    let mut reports = Vec::new();
    for (name, flags) in AblationFlags::table() {
        let sized = ModelConfig { vocab: 40, classes: labels.len(), ..benchmark::model_config() };
        let params = TempoFormer::<f32>::new(sized, flags)?.param_count();
        let runner = TempoFormerRunner {
            model: benchmark::model_config(),
            flags,
            train: TrainConfig { epochs: 5, ..benchmark::train_config() },
            labels: labels.clone(),
            save_artifacts: false,
        };
        println!("{name}: {params} parameters at vocabulary 40");
        reports.push((name.to_string(), cross_validate(&runner, &timelines, &labels, &cv, None)?));
    }
    let rows: Vec<(String, _)> = reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    print!("{}", render_table("ablation", &rows));
    Ok(())
}
