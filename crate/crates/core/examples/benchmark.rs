//! Temporal vs positional rotary phases on the synthetic benchmark corpus.
//!
//! `cargo run --release --example benchmark -- [max_folds]`

use tempoformer::benchmark;
use tempoformer::evaluation::{render_table, CvConfig};

fn main() -> tempoformer::Result<()> {
    let max_folds = std::env::args().nth(1).map(|a| a.parse().expect("max_folds is a number"));
    let cv = CvConfig { max_folds, ..CvConfig::default() };
    let r = benchmark::run(&cv)?;
    let rows = vec![("TempoFormer".to_string(), &r.temporal), ("-Temporal RoPE".to_string(), &r.positional)];
    print!("{}", render_table("synthetic benchmark", &rows));
    for s in &r.temporal.seeds {
        println!("temporal seed {}: {:.4}", s.seed, s.macro_f1);
    }
    for s in &r.positional.seeds {
        println!("positional seed {}: {:.4}", s.seed, s.macro_f1);
    }
    println!("margin {:.4} in {:.0}s", r.margin(), r.seconds);
    Ok(())
}
