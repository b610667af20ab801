//! Writes a synthetic corpus and shows the streams built from one timeline.
//!
//! `cargo run --release --example generate -- [out.jsonl]`

use std::collections::BTreeMap;

use tempoformer::data::{build_streams, generate_synthetic, write_timelines, GenConfig};

fn main() -> tempoformer::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic.jsonl".into());
    let cfg = GenConfig { timelines: 50, ..GenConfig::default() };
    let timelines = generate_synthetic(&cfg, 7)?;
    write_timelines(&out, &timelines)?;

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in timelines.iter().flat_map(|t| &t.posts) {
        *counts.entry(p.label.as_str()).or_default() += 1;
    }
    println!("wrote {} timelines to {out}; labels {counts:?}", timelines.len());

    let first = &timelines[0];
    for s in build_streams(first, 3).iter().take(5) {
        let gaps: Vec<i64> = s
            .timestamps
            .as_ref()
            .map(|t| t.windows(2).map(|w| w[1] - w[0]).collect())
            .unwrap_or_default();
        println!("post {:2} [{}] gaps {gaps:?}: {:?}", s.current, s.label, s.texts.last().unwrap());
    }
    Ok(())
}
