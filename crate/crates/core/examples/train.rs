//! Trains on one fold, scores the test split, and round-trips the checkpoint.

use tempoformer::benchmark;
use tempoformer::data::{generate_synthetic, split_folds, GenConfig, LabelSet};
use tempoformer::evaluation::{f1_scores, FoldData, TempoFormerRunner};
use tempoformer::model::{AblationFlags, Checkpoint};
use tempoformer::training::TrainConfig;

fn main() -> tempoformer::Result<()> {
    let timelines = generate_synthetic(&GenConfig { timelines: 80, ..benchmark::corpus_config() }, 7)?;
    let labels = LabelSet::from_timelines(&timelines)?;
    let folds = split_folds(&timelines, 5, 0.25, 0)?;
    let data = FoldData::new(&timelines, 0, &folds[0]);
    let runner = TempoFormerRunner {
        model: benchmark::model_config(),
        flags: AblationFlags::default(),
        train: TrainConfig { epochs: 8, patience: 3, ..benchmark::train_config() },
        labels: labels.clone(),
        save_artifacts: false,
    };
    let fitted = runner.fit(&data, 0, |r, _| {
        println!("epoch {} loss {:.4} dev macro-F1 {:.4}", r.epoch, r.train_loss, r.dev_macro_f1);
        Ok(())
    })?;
    let (preds, golds) = runner.score(&fitted, &data.test)?;
    let s = f1_scores(&preds, &golds, labels.len())?;
    println!("best epoch {}, test macro-F1 {:.4}, per class {:?}", fitted.outcome.best_epoch, s.macro_f1, s.f1);

    let dir = std::env::temp_dir().join("tempoformer-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("best.json");
    Checkpoint::from_model(&fitted.outcome.best, &fitted.vocab, &labels, serde_json::json!({})).save(&path)?;
    let restored = Checkpoint::load(&path)?.to_model::<f32>()?;
    let same = restored.store().iter().zip(fitted.outcome.best.store().iter()).all(|(a, b)| a.1.value == b.1.value);
    println!("checkpoint {} restores identical weights: {same}", path.display());
    Ok(())
}
