//! Timelines of timestamped posts, their conversion into fixed-window
//! streams, tokenization, fold splitting and a synthetic corpus generator.

mod folds;
pub mod synthetic;
mod vocab;

pub use folds::{split_folds, Fold};
pub use synthetic::{generate_synthetic, GenConfig};
pub use vocab::{normalize, tokenize, Vocabulary, CLS, PAD, SEP, UNK};

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub text: String,
    /// Seconds since the epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub timeline_id: String,
    pub posts: Vec<Post>,
}

impl Timeline {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn has_timestamps(&self) -> bool {
        self.posts.iter().all(|p| p.timestamp.is_some())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.posts.is_empty() {
            return Err(format!("timeline `{}` has no posts", self.timeline_id));
        }
        let present = self.posts.iter().filter(|p| p.timestamp.is_some()).count();
        if present != 0 && present != self.posts.len() {
            return Err(format!(
                "timeline `{}` mixes present and absent timestamps",
                self.timeline_id
            ));
        }
        for (i, w) in self.posts.windows(2).enumerate() {
            if let (Some(a), Some(b)) = (w[0].timestamp, w[1].timestamp) {
                if b < a {
                    return Err(format!(
                        "timeline `{}`: timestamp decreases at post {}",
                        self.timeline_id,
                        i + 1
                    ));
                }
            }
        }
        for (i, p) in self.posts.iter().enumerate() {
            if normalize(&p.text).is_empty() {
                return Err(format!(
                    "timeline `{}`: post {i} has no tokens",
                    self.timeline_id
                ));
            }
        }
        Ok(())
    }
}

/// Reads line-delimited timeline objects. Blank lines are skipped;
/// timestamps must be present on every post or on none across the file.
pub fn parse_timelines(path: impl AsRef<Path>) -> Result<Vec<Timeline>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut timed: Option<bool> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let t: Timeline = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        t.validate().map_err(err)?;
        let has = t.has_timestamps();
        match timed {
            None => timed = Some(has),
            Some(prev) if prev != has => {
                return Err(err(
                    "dataset mixes timestamped and untimestamped timelines".into(),
                ))
            }
            _ => {}
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_timelines(path: impl AsRef<Path>, timelines: &[Timeline]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in timelines {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Ordered class names; a label's id is its index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let unique: BTreeSet<&String> = names.iter().collect();
        if names.is_empty() || unique.len() != names.len() {
            return Err(Error::Data(format!("invalid label set {names:?}")));
        }
        Ok(Self { names })
    }

    /// Sorted distinct labels seen across the timelines.
    pub fn from_timelines(timelines: &[Timeline]) -> Result<Self> {
        let set: BTreeSet<&str> = timelines
            .iter()
            .flat_map(|t| t.posts.iter().map(|p| p.label.as_str()))
            .collect();
        Self::new(set.into_iter().map(String::from).collect())
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Data(format!("unknown label `{name}`")))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// The `w` most recent posts of a timeline ending at a labeled current post.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    pub timeline_id: String,
    /// Index of the first post of the window within its timeline.
    pub start: usize,
    /// Index of the current (last, labeled) post.
    pub current: usize,
    pub texts: Vec<String>,
    pub timestamps: Option<Vec<i64>>,
    pub label: String,
}

impl Stream {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn encode(&self, vocab: &Vocabulary, max_len: usize, labels: &LabelSet) -> Result<EncodedStream> {
        let (tokens, masks) = self
            .texts
            .iter()
            .map(|t| tokenize(t, vocab, max_len))
            .unzip();
        Ok(EncodedStream {
            tokens,
            masks,
            timestamps: self
                .timestamps
                .as_ref()
                .map(|ts| ts.iter().map(|&t| t as f64).collect()),
            label: labels.id(&self.label)?,
        })
    }
}

/// A stream in model-ready form: per-post token ids and masks.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedStream {
    pub tokens: Vec<Vec<usize>>,
    pub masks: Vec<Vec<bool>>,
    pub timestamps: Option<Vec<f64>>,
    pub label: usize,
}

impl EncodedStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One stream per post: stream `i` holds posts `max(0, i−w+1)..=i` and the
/// label of post `i`.
pub fn build_streams(timeline: &Timeline, window: usize) -> Vec<Stream> {
    let w = window.max(1);
    (0..timeline.posts.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(w);
            let posts = &timeline.posts[start..=i];
            Stream {
                timeline_id: timeline.timeline_id.clone(),
                start,
                current: i,
                texts: posts.iter().map(|p| p.text.clone()).collect(),
                timestamps: posts.iter().map(|p| p.timestamp).collect(),
                label: timeline.posts[i].label.clone(),
            }
        })
        .collect()
}

/// Streams of every timeline whose id is in `ids`, in timeline order.
pub fn streams_for(timelines: &[Timeline], ids: &[String], window: usize) -> Vec<Stream> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    timelines
        .iter()
        .filter(|t| wanted.contains(t.timeline_id.as_str()))
        .flat_map(|t| build_streams(t, window))
        .collect()
}
