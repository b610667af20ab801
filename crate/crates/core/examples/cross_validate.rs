//! Cross-validation over folds and seeds, with per-run records on disk.

use tempoformer::benchmark;
use tempoformer::data::{generate_synthetic, GenConfig, LabelSet};
use tempoformer::evaluation::{cross_validate, render_table, CvConfig, TempoFormerRunner};
use tempoformer::model::AblationFlags;
use tempoformer::training::TrainConfig;

fn main() -> tempoformer::Result<()> {
    let timelines = generate_synthetic(&GenConfig { timelines: 60, ..benchmark::corpus_config() }, 7)?;
    let labels = LabelSet::from_timelines(&timelines)?;
    let runner = TempoFormerRunner {
        model: benchmark::model_config(),
        flags: AblationFlags::default(),
        train: TrainConfig { epochs: 5, ..benchmark::train_config() },
        labels: labels.clone(),
        save_artifacts: true,
    };
    let cv = CvConfig { seeds: vec![0, 1], max_folds: Some(2), ..CvConfig::default() };
    let out = std::env::temp_dir().join("tempoformer-cv");
    let report = cross_validate(&runner, &timelines, &labels, &cv, Some(&out))?;
    for r in &report.runs {
        println!("fold {} seed {}: test macro-F1 {:.4} (best epoch {})", r.fold, r.seed, r.test_macro_f1, r.best_epoch);
    }
    print!("{}", render_table("cross-validation", &[("TempoFormer".into(), &report)]));
    println!("run records under {}", out.join("runs").display());
    Ok(())
}
