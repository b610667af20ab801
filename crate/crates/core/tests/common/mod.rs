#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempoformer::data::{EncodedStream, CLS, PAD, SEP};
use tempoformer::model::{AblationFlags, ModelConfig, Prepared, TempoFormer};
use tempoformer::tensor::Scalar;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d: 8,
        heads: 2,
        d_ff: 16,
        vocab: 12,
        max_len: 6,
        window: 3,
        local_layers: 1,
        classes: 2,
        head_hidden: 8,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A stream of `n` posts with random content lengths and increasing times.
pub fn random_stream(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize, timed: bool) -> EncodedStream {
    let k = cfg.max_len;
    let mut tokens = Vec::new();
    let mut masks = Vec::new();
    for _ in 0..n {
        let content = rng.gen_range(1..=k - 2);
        let mut ids = vec![CLS];
        ids.extend((0..content).map(|_| rng.gen_range(4..cfg.vocab)));
        ids.push(SEP);
        let mut mask = vec![true; ids.len()];
        ids.resize(k, PAD);
        mask.resize(k, false);
        tokens.push(ids);
        masks.push(mask);
    }
    let timestamps = timed.then(|| {
        let mut t = 1.6e9;
        (0..n)
            .map(|_| {
                t += rng.gen_range(1.0..50_000.0f64).round();
                t
            })
            .collect()
    });
    EncodedStream {
        tokens,
        masks,
        timestamps,
        label: rng.gen_range(0..cfg.classes),
    }
}

pub fn model<S: Scalar>(cfg: &ModelConfig, flags: AblationFlags) -> TempoFormer<S> {
    TempoFormer::new(cfg.clone(), flags).unwrap()
}

pub fn prepare_all<S: Scalar>(m: &TempoFormer<S>, streams: &[EncodedStream]) -> Vec<Prepared> {
    streams.iter().map(|s| m.prepare(s).unwrap()).collect()
}
