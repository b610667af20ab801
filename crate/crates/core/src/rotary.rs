//! Rotary position embeddings driven either by integer positions or by
//! log-transformed timestamps, and the temporal rotary multi-head attention
//! that runs over per-post CLS vectors.
//!
//! A phase `φ` rotates coordinate pair `(2i, 2i+1)` of a head by `φ·θᵢ` with
//! `θᵢ = 10000^(−2i/d_h)` (0-based `i`). Because rotations compose, the score
//! between a query with phase `φ_m` and a key with phase `φ_n` only depends on
//! `φ_n − φ_m`: with timestamps as phases, attention sees elapsed time rather
//! than sequence distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{attention, AttentionOutput, AttentionParams, Ctx, RotaryTables};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Rotation frequencies for one attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct RotaryAngles {
    theta: Vec<f64>,
}

impl RotaryAngles {
    pub fn new(head_dim: usize) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rotary head width must be even and positive, got {head_dim}"
            )));
        }
        let d = head_dim as f64;
        let theta = (0..head_dim / 2)
            .map(|i| 10000f64.powf(-2.0 * i as f64 / d))
            .collect();
        Ok(Self { theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn head_dim(&self) -> usize {
        self.theta.len() * 2
    }

    /// `cos(φ_k·θᵢ)` and `sin(φ_k·θᵢ)` laid out `[phases × d_h/2]`.
    pub fn tables(&self, phases: &[f64]) -> RotaryTables {
        let half = self.theta.len();
        let mut cos = Vec::with_capacity(phases.len() * half);
        let mut sin = Vec::with_capacity(phases.len() * half);
        for &p in phases {
            for &t in &self.theta {
                let (s, c) = (p * t).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        RotaryTables { cos, sin }
    }
}

/// Rotates row `k` of `x: [K × d_h]` by phase `phases[k]`.
pub fn rotary_apply<S: Scalar>(
    graph: &mut Graph<S>,
    x: Var,
    phases: &[f64],
    angles: &RotaryAngles,
) -> Result<Var> {
    let width = graph.value(x).last_dim();
    if width != angles.head_dim() {
        return Err(Error::InvalidShape {
            op: "rotary_apply",
            detail: format!("row width {width}, rotary width {}", angles.head_dim()),
        });
    }
    let t = angles.tables(phases);
    graph.rotary(
        x,
        t.cos.into_iter().map(S::cast_from).collect(),
        t.sin.into_iter().map(S::cast_from).collect(),
        phases.len(),
        phases.len(),
    )
}

/// `score[m][n] = (R_{φ_m} q_m)ᵀ (R_{φ_n} k_n)` for `q, k: [K × d_h]`.
pub fn rope_scores<S: Scalar>(q: &Tensor<S>, k: &Tensor<S>, phases: &[f64]) -> Result<Tensor<S>> {
    if q.shape() != k.shape() || q.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "rope_scores",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let angles = RotaryAngles::new(q.last_dim())?;
    let mut g = Graph::new();
    let qv = g.constant(q.clone());
    let kv = g.constant(k.clone());
    let qr = rotary_apply(&mut g, qv, phases, &angles)?;
    let kr = rotary_apply(&mut g, kv, phases, &angles)?;
    let kt = kr_transpose(g.value(kr));
    g.value(qr).matmul(&kt)
}

fn kr_transpose<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let (r, c) = (t.rows(), t.last_dim());
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(&[c, r], out).expect("transpose shape")
}

/// `τ_k = ln(1 + max(0, t_k − anchor))` for timestamps in seconds.
pub fn log_time_transform(timestamps: &[f64], anchor: f64) -> Vec<f64> {
    timestamps
        .iter()
        .map(|&t| (t - anchor).max(0.0).ln_1p())
        .collect()
}

/// Which post a stream's log-time phases are measured from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeAnchor {
    /// `τ_k = ln(1 + (t_k − t_first))`.
    First,
    /// `τ_k = −ln(1 + (t_current − t_k))`: the current post sits at phase 0
    /// and every history post is rotated by the log of its age.
    #[default]
    Current,
}

/// Phases for a chronologically ordered stream of timestamps.
pub fn stream_phases(timestamps: &[f64], anchor: TimeAnchor) -> Vec<f64> {
    let (Some(&first), Some(&last)) = (timestamps.first(), timestamps.last()) else {
        return Vec::new();
    };
    match anchor {
        TimeAnchor::First => log_time_transform(timestamps, first),
        TimeAnchor::Current => timestamps
            .iter()
            .map(|&t| -(last - t).max(0.0).ln_1p())
            .collect(),
    }
}

/// Attention-only block applied across the CLS vectors of a stream.
#[derive(Clone, Copy, Debug)]
pub struct TemporalMhaParams {
    pub attention: AttentionParams,
}

/// Self-attention over `cls: [w × d]` where every head's queries and keys
/// are rotated by `phases` (log-times or positions). `None` gives plain
/// multi-head attention. No feed-forward and no normalization follow.
pub fn temporal_rotary_mha<S: Scalar>(
    ctx: &mut Ctx<S>,
    cls: Var,
    phases: Option<&[f64]>,
    mask: &[bool],
    params: &TemporalMhaParams,
) -> Result<AttentionOutput> {
    let w = ctx.graph.value(cls).rows();
    temporal_rotary_mha_grouped(ctx, cls, phases, mask, 1, w, params)
}

/// [`temporal_rotary_mha`] over `groups` streams of `w` CLS rows stacked as
/// `[groups·w × d]`, each with its own slice of `phases`.
pub fn temporal_rotary_mha_grouped<S: Scalar>(
    ctx: &mut Ctx<S>,
    cls: Var,
    phases: Option<&[f64]>,
    mask: &[bool],
    groups: usize,
    w: usize,
    params: &TemporalMhaParams,
) -> Result<AttentionOutput> {
    let tables = match phases {
        Some(p) => {
            if p.len() != groups * w {
                return Err(Error::InvalidShape {
                    op: "temporal_rotary_mha",
                    detail: format!("{} phases for {groups}×{w} posts", p.len()),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data("non-finite rotary phase".into()));
            }
            let d = ctx.graph.value(cls).last_dim();
            let angles = RotaryAngles::new(d / params.attention.heads)?;
            Some(angles.tables(p))
        }
        None => None,
    };
    attention(ctx, cls, mask, groups, w, &params.attention, tables.as_ref())
}
