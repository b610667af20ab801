use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotary::TimeAnchor;

/// Source of the rotary phases in the two stream-level attentions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// Log-transformed post timestamps.
    #[default]
    Temporal,
    /// Integer post positions within the window.
    Positional,
    /// No rotation.
    None,
}

/// Mapping from elapsed seconds to phases in temporal mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeTransform {
    #[default]
    Log,
    /// Raw second offsets; only meaningful for checks and toy inputs.
    Identity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    TempoFormer,
    /// Bidirectional recurrence over the pooled per-post CLS vectors.
    RoTempoFormer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    /// Tokens per post, `K`.
    pub max_len: usize,
    /// Posts per stream, `w`.
    pub window: usize,
    /// Post-level layers run before the stream layer.
    pub local_layers: usize,
    pub classes: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub time_mode: TimeMode,
    pub time_anchor: TimeAnchor,
    pub time_transform: TimeTransform,
    pub variant: Variant,
    /// Hidden width of each direction of the recurrent layer; 0 means `d`.
    pub recurrent_hidden: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            d_ff: 256,
            vocab: 0,
            max_len: 64,
            window: 10,
            local_layers: 2,
            classes: 2,
            head_hidden: 64,
            dropout: 0.1,
            time_mode: TimeMode::Temporal,
            time_anchor: TimeAnchor::Current,
            time_transform: TimeTransform::Log,
            variant: Variant::TempoFormer,
            recurrent_hidden: 0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("window", self.window),
            ("classes", self.classes),
            ("head_hidden", self.head_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must hold [CLS] and [SEP]".into()));
        }
        if !self.d.is_multiple_of(self.heads) || !(self.d / self.heads).is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d={} must split into {} heads of even width",
                self.d, self.heads
            )));
        }
        if self.d_ff < self.d {
            return Err(Error::Config("d_ff must be at least d".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn recurrent_width(&self) -> usize {
        if self.recurrent_hidden == 0 {
            self.d
        } else {
            self.recurrent_hidden
        }
    }
}

/// Switches that remove one architectural component each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Positional instead of temporal rotary phases.
    pub no_temporal_rope: bool,
    /// Plain multi-head attention over the CLS vectors.
    pub no_rope_mha: bool,
    /// Drop the context-layer stream position embeddings.
    pub no_stream_embed_s11: bool,
    /// Drop both stream position embedding tables.
    pub no_stream_embed_s10_s11: bool,
    /// Use the context attention output directly instead of gated fusion.
    pub no_gate_norm: bool,
}

impl AblationFlags {
    pub fn uses_s10(&self) -> bool {
        !self.no_stream_embed_s10_s11
    }

    pub fn uses_s11(&self) -> bool {
        !(self.no_stream_embed_s11 || self.no_stream_embed_s10_s11)
    }

    /// The full model followed by the five single-component ablations.
    pub fn table() -> Vec<(&'static str, AblationFlags)> {
        let none = AblationFlags::default();
        vec![
            ("TempoFormer", none),
            (
                "-Temporal RoPE",
                AblationFlags {
                    no_temporal_rope: true,
                    ..none
                },
            ),
            (
                "-RoPE MHA",
                AblationFlags {
                    no_rope_mha: true,
                    ..none
                },
            ),
            (
                "-Stream embed s11",
                AblationFlags {
                    no_stream_embed_s11: true,
                    ..none
                },
            ),
            (
                "-Stream embed s10,s11",
                AblationFlags {
                    no_stream_embed_s10_s11: true,
                    no_stream_embed_s11: true,
                    ..none
                },
            ),
            (
                "-Gate&Norm",
                AblationFlags {
                    no_gate_norm: true,
                    ..none
                },
            ),
        ]
    }
}
