//! The recurrent variant: a bidirectional LSTM over the pooled post vectors.

use tempoformer::benchmark;
use tempoformer::data::{generate_synthetic, split_folds, GenConfig, LabelSet};
use tempoformer::evaluation::{f1_scores, FoldData, TempoFormerRunner};
use tempoformer::model::{AblationFlags, ModelConfig, TempoFormer, Variant};
use tempoformer::training::TrainConfig;

fn main() -> tempoformer::Result<()> {
    let timelines = generate_synthetic(&GenConfig { timelines: 80, ..benchmark::corpus_config() }, 7)?;
    let labels = LabelSet::from_timelines(&timelines)?;
    let folds = split_folds(&timelines, 5, 0.25, 0)?;
    let data = FoldData::new(&timelines, 0, &folds[0]);
    for variant in [Variant::TempoFormer, Variant::RoTempoFormer] {
        let model = ModelConfig { variant, ..benchmark::model_config() };
        let params = TempoFormer::<f32>::new(ModelConfig { vocab: 40, ..model.clone() }, AblationFlags::default())?.param_count();
        let runner = TempoFormerRunner {
            model,
            flags: AblationFlags::default(),
            train: TrainConfig { epochs: 6, ..benchmark::train_config() },
            labels: labels.clone(),
            save_artifacts: false,
        };
        let fitted = runner.fit(&data, 0, |_, _| Ok(()))?;
        let (preds, golds) = runner.score(&fitted, &data.test)?;
        let f1 = f1_scores(&preds, &golds, labels.len())?.macro_f1;
        println!("{variant:?}: {params} parameters, test macro-F1 {f1:.4}");
    }
    Ok(())
}
