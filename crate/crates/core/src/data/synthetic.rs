//! Synthetic change-detection timelines whose labels depend on time gaps.
//!
//! Every post carries one polarity word (positive or negative family) among
//! filler tokens. A post is labeled `switch` when its polarity differs from
//! the strict majority polarity of the earlier posts written within the last
//! `horizon` seconds, and `none` otherwise (including when that horizon holds
//! no posts, or is tied). After a pause longer than the horizon the polarity
//! is redrawn at random, so polarity changes after long gaps are mostly
//! labeled `none`: only a model that sees elapsed time can tell them apart.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Post, Timeline};
use crate::error::{Error, Result};

pub const POSITIVE_WORDS: [&str; 5] = ["good", "great", "happy", "calm", "glad"];
pub const NEGATIVE_WORDS: [&str; 5] = ["bad", "sad", "angry", "awful", "upset"];

pub const LABEL_NONE: &str = "none";
pub const LABEL_SWITCH: &str = "switch";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Generator settings, readable from a flat `key = value` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub timelines: usize,
    pub min_posts: usize,
    pub max_posts: usize,
    /// Gap bounds in seconds; gaps are log-uniform in between.
    pub min_gap: f64,
    pub max_gap: f64,
    pub horizon: f64,
    pub fillers_per_post: usize,
    pub filler_vocab: usize,
    /// Probability of a polarity flip between posts inside the horizon when
    /// `positive_rate` is 0.5.
    pub flip_prob: f64,
    /// Stationary share of positive posts. Redraws after long pauses use it
    /// directly; flips are scaled to `2·flip_prob·(1 − rate)` away from
    /// positive and `2·flip_prob·rate` towards it.
    pub positive_rate: f64,
    pub start_time: i64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            timelines: 200,
            min_posts: 10,
            max_posts: 40,
            min_gap: 60.0,
            max_gap: 86_400.0,
            horizon: 6.0 * 3600.0,
            fillers_per_post: 3,
            filler_vocab: 30,
            flip_prob: 0.25,
            positive_rate: 0.5,
            start_time: 1_600_000_000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.timelines == 0 {
            return bad("timelines must be positive");
        }
        if self.min_posts == 0 || self.min_posts > self.max_posts {
            return bad("post count range must satisfy 1 <= min_posts <= max_posts");
        }
        if !(self.min_gap > 0.0 && self.min_gap <= self.max_gap && self.max_gap.is_finite()) {
            return bad("gap range must satisfy 0 < min_gap <= max_gap < inf");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if self.filler_vocab == 0 && self.fillers_per_post > 0 {
            return bad("filler_vocab must be positive when fillers are used");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip_prob must lie in [0, 1]");
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad("positive_rate must lie in (0, 1)");
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys fail.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = crate::kv::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_kv(&self) -> String {
        crate::kv::render(self)
    }
}

/// Labels for a sequence of polarities at the given times.
pub fn label_sequence(polarities: &[Polarity], times: &[i64], horizon: f64) -> Vec<&'static str> {
    (0..polarities.len())
        .map(|i| {
            let (mut same, mut other) = (0usize, 0usize);
            for j in 0..i {
                if (times[i] - times[j]) as f64 <= horizon {
                    if polarities[j] == polarities[i] {
                        same += 1;
                    } else {
                        other += 1;
                    }
                }
            }
            if other > same {
                LABEL_SWITCH
            } else {
                LABEL_NONE
            }
        })
        .collect()
}

fn polarity_word(rng: &mut ChaCha8Rng, p: Polarity) -> &'static str {
    let family = match p {
        Polarity::Positive => &POSITIVE_WORDS,
        Polarity::Negative => &NEGATIVE_WORDS,
    };
    family[rng.gen_range(0..family.len())]
}

fn random_polarity(rng: &mut ChaCha8Rng, positive_rate: f64) -> Polarity {
    if rng.gen_bool(positive_rate) {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

/// Deterministic corpus for a given configuration and seed.
pub fn generate_synthetic(cfg: &GenConfig, seed: u64) -> Result<Vec<Timeline>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (cfg.min_gap.ln(), cfg.max_gap.ln());
    let mut out = Vec::with_capacity(cfg.timelines);
    for ti in 0..cfg.timelines {
        let n = rng.gen_range(cfg.min_posts..=cfg.max_posts);
        let mut times = Vec::with_capacity(n);
        let mut pols = Vec::with_capacity(n);
        let mut t = cfg.start_time + rng.gen_range(0..86_400 * 365);
        for i in 0..n {
            let pol = if i == 0 {
                random_polarity(&mut rng, cfg.positive_rate)
            } else {
                let gap = if lo == hi { lo } else { rng.gen_range(lo..hi) }.exp().round() as i64;
                t += gap.max(1);
                let prev = pols[i - 1];
                if gap as f64 > cfg.horizon {
                    random_polarity(&mut rng, cfg.positive_rate)
                } else {
                    let (away, other) = match prev {
                        Polarity::Positive => (1.0 - cfg.positive_rate, Polarity::Negative),
                        Polarity::Negative => (cfg.positive_rate, Polarity::Positive),
                    };
                    if rng.gen_bool((2.0 * cfg.flip_prob * away).min(1.0)) {
                        other
                    } else {
                        prev
                    }
                }
            };
            times.push(t);
            pols.push(pol);
        }
        let labels = label_sequence(&pols, &times, cfg.horizon);
        let posts = pols
            .iter()
            .zip(&times)
            .zip(labels)
            .map(|((&p, &ts), label)| {
                let mut words: Vec<String> = (0..cfg.fillers_per_post)
                    .map(|_| format!("w{}", rng.gen_range(0..cfg.filler_vocab)))
                    .collect();
                let at = rng.gen_range(0..=words.len());
                words.insert(at, polarity_word(&mut rng, p).to_string());
                Post {
                    text: words.join(" "),
                    timestamp: Some(ts),
                    label: label.to_string(),
                }
            })
            .collect();
        out.push(Timeline {
            timeline_id: format!("synthetic-{ti:05}"),
            posts,
        });
    }
    Ok(out)
}
