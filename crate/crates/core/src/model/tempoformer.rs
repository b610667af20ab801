use crate::data::{EncodedStream, CLS, PAD, SEP};
use crate::error::{Error, Result};
use crate::nn::{
    cls_pool, Ctx, EmbeddingTables, EncoderLayerParams, Init, LayerNormParams, Linear, ParamId,
    ParamStore,
};
use crate::rotary::{stream_phases, temporal_rotary_mha_grouped, TemporalMhaParams, TimeAnchor};
use crate::nn::AttentionParams;
use crate::tensor::{Scalar, Tensor, Var};

use super::config::{AblationFlags, ModelConfig, TimeMode, TimeTransform, Variant};
use super::recurrent::BiLstm;

const STREAM_SITE: u64 = 100;
const CONTEXT_SITE: u64 = 101;
const HEAD_SITE: u64 = 1000;

/// Phases for the `n` valid posts of a stream, or `None` when the stream
/// attentions run without rotation.
pub fn post_phases(
    mode: TimeMode,
    timestamps: Option<&[f64]>,
    n: usize,
    anchor: TimeAnchor,
    transform: TimeTransform,
) -> Result<Option<Vec<f64>>> {
    let positional = |n: usize| -> Vec<f64> {
        let offset = match anchor {
            TimeAnchor::First => 0.0,
            TimeAnchor::Current => (n - 1) as f64,
        };
        (0..n).map(|k| k as f64 - offset).collect()
    };
    Ok(match (mode, timestamps) {
        (TimeMode::None, _) => None,
        (TimeMode::Positional, _) | (TimeMode::Temporal, None) => Some(positional(n)),
        (TimeMode::Temporal, Some(ts)) => {
            if ts.len() != n {
                return Err(Error::InvalidShape {
                    op: "post_phases",
                    detail: format!("{} timestamps for {n} posts", ts.len()),
                });
            }
            Some(match transform {
                TimeTransform::Log => stream_phases(ts, anchor),
                TimeTransform::Identity => {
                    let origin = match anchor {
                        TimeAnchor::First => ts[0],
                        TimeAnchor::Current => ts[n - 1],
                    };
                    ts.iter().map(|&t| t - origin).collect()
                }
            })
        }
    })
}

/// A stream padded on the left to the model window.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    /// `w·K` token ids, post after post.
    pub tokens: Vec<usize>,
    pub token_mask: Vec<bool>,
    /// One entry per post; padding posts are false.
    pub post_mask: Vec<bool>,
    pub phases: Option<Vec<f64>>,
    pub label: usize,
}

/// Several prepared streams stacked for one forward pass.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub window: usize,
    pub max_len: usize,
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    pub token_mask: Vec<bool>,
    pub post_mask: Vec<bool>,
    pub phases: Option<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    /// Row of every post's CLS token in the stacked `[B·w·K × d]` layout.
    pub fn cls_rows(&self) -> Vec<usize> {
        (0..self.size * self.window).map(|p| p * self.max_len).collect()
    }

    /// Post index of each stream's current post in the `[B·w × d]` layout.
    pub fn current_posts(&self) -> Vec<usize> {
        (0..self.size).map(|b| b * self.window + self.window - 1).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub proj: Linear,
    pub norm: LayerNormParams,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub fc1: Linear,
    pub fc2: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: EmbeddingTables,
    local: Vec<EncoderLayerParams>,
    pooler: Linear,
    s10: Option<ParamId>,
    stream_layer: EncoderLayerParams,
    stream_mha: TemporalMhaParams,
    s11: Option<ParamId>,
    context_layer: EncoderLayerParams,
    context_mha: TemporalMhaParams,
    gate: Option<GateParams>,
    head: HeadParams,
    recurrent: Option<BiLstm>,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Trace {
    /// Local token states `[B·w·K × d]`.
    pub h10: Var,
    /// Pooled local CLS of each current post `[B × d]`.
    pub c_local: Var,
    /// Stream-layer output before CLS replacement.
    pub h11: Var,
    pub h11_prime: Var,
    /// Context-layer output, and the same with its CLS rows replaced.
    pub h12: Var,
    pub h12_prime: Var,
    pub h12_cls: Var,
    pub h12_cls_prime: Var,
    /// Fused per-post vectors `[B·w × d]`.
    pub c_global: Var,
    pub logits: Var,
    pub stream_weights: Var,
    pub context_weights: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StreamOutput {
    pub h11: Var,
    pub h11_prime: Var,
    pub weights: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ContextOutput {
    pub h12: Var,
    pub h12_prime: Var,
    pub cls: Var,
    pub cls_prime: Var,
    pub weights: Var,
}

/// Hierarchical stream classifier: posts are encoded locally, their CLS
/// vectors exchange information through (temporal) rotary attention at two
/// levels, and the current post is classified from its local and fused CLS.
#[derive(Clone, Debug)]
pub struct TempoFormer<S: Scalar> {
    config: ModelConfig,
    flags: AblationFlags,
    store: ParamStore<S>,
    layout: Layout,
}

impl<S: Scalar> TempoFormer<S> {
    pub fn new(config: ModelConfig, flags: AblationFlags) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let seed = c.init_seed;
        let mut store = ParamStore::new();
        let s = &mut store;
        let init = |name: &str| Init::for_module(seed, name);

        let embed = EmbeddingTables::new(s, &mut init("embed"), c.vocab, c.max_len, c.d);
        let local = (0..c.local_layers)
            .map(|i| {
                let name = format!("local.{i}");
                EncoderLayerParams::new(s, &mut init(&name), &name, c.d, c.heads, c.d_ff, c.dropout, 1 + i as u64)
            })
            .collect::<Result<Vec<_>>>()?;
        let pooler = Linear::new(s, &mut init("pooler"), "pooler", c.d, c.d);
        let stream_table = |s: &mut ParamStore<S>, name: &str| {
            s.add(name, init(name).normal(&[c.window, c.d], 0.1), true)
        };
        let s10 = flags.uses_s10().then(|| stream_table(s, "stream.s10"));
        let stream_layer = EncoderLayerParams::new(
            s,
            &mut init("stream.layer"),
            "stream.layer",
            c.d,
            c.heads,
            c.d_ff,
            c.dropout,
            STREAM_SITE,
        )?;
        let mha = |s: &mut ParamStore<S>, name: &str| -> Result<TemporalMhaParams> {
            Ok(TemporalMhaParams {
                attention: AttentionParams::new(s, &mut init(name), name, c.d, c.heads)?,
            })
        };
        let stream_mha = mha(s, "stream.mha")?;
        let s11 = flags.uses_s11().then(|| stream_table(s, "context.s11"));
        let context_layer = EncoderLayerParams::new(
            s,
            &mut init("context.layer"),
            "context.layer",
            c.d,
            c.heads,
            c.d_ff,
            c.dropout,
            CONTEXT_SITE,
        )?;
        let context_mha = mha(s, "context.mha")?;
        let gate = (!flags.no_gate_norm).then(|| GateParams {
            proj: Linear::new(s, &mut init("gate.proj"), "gate.proj", 2 * c.d, c.d),
            norm: LayerNormParams::new(s, "gate.norm", c.d),
        });
        let head_in = match c.variant {
            Variant::TempoFormer => 2 * c.d,
            Variant::RoTempoFormer => 2 * c.recurrent_width(),
        };
        let recurrent = (c.variant == Variant::RoTempoFormer).then(|| {
            BiLstm::new(s, &mut init("recurrent"), "recurrent", c.d, c.recurrent_width())
        });
        let head = HeadParams {
            fc1: Linear::new(s, &mut init("head.fc1"), "head.fc1", head_in, c.head_hidden),
            fc2: Linear::new(s, &mut init("head.fc2"), "head.fc2", c.head_hidden, c.head_hidden),
            out: Linear::new(s, &mut init("head.out"), "head.out", c.head_hidden, c.classes),
        };
        let layout = Layout {
            embed,
            local,
            pooler,
            s10,
            stream_layer,
            stream_mha,
            s11,
            context_layer,
            context_mha,
            gate,
            head,
            recurrent,
        };
        Ok(Self {
            config,
            flags,
            store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn flags(&self) -> &AblationFlags {
        &self.flags
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn gate(&self) -> Option<GateParams> {
        self.layout.gate
    }

    pub fn head(&self) -> HeadParams {
        self.layout.head
    }

    pub fn embedding(&self) -> EmbeddingTables {
        self.layout.embed
    }

    pub fn local_layers(&self) -> &[EncoderLayerParams] {
        &self.layout.local
    }

    pub fn pooler(&self) -> Linear {
        self.layout.pooler
    }

    pub fn stream_mha(&self) -> TemporalMhaParams {
        self.layout.stream_mha
    }

    pub fn context_mha(&self) -> TemporalMhaParams {
        self.layout.context_mha
    }

    pub fn recurrent(&self) -> Option<BiLstm> {
        self.layout.recurrent
    }

    pub fn stream_tables(&self) -> (Option<ParamId>, Option<ParamId>) {
        (self.layout.s10, self.layout.s11)
    }

    /// Rotary source used by both stream attentions after applying flags.
    pub fn time_mode(&self, has_timestamps: bool) -> TimeMode {
        if self.flags.no_rope_mha {
            return TimeMode::None;
        }
        match self.config.time_mode {
            TimeMode::Temporal if self.flags.no_temporal_rope || !has_timestamps => TimeMode::Positional,
            m => m,
        }
    }

    /// Left-pads a stream to the window with `[CLS][SEP]` pseudo-posts.
    pub fn prepare(&self, stream: &EncodedStream) -> Result<Prepared> {
        let (w, k) = (self.config.window, self.config.max_len);
        let n = stream.len();
        if n == 0 {
            return Err(Error::Data("empty stream".into()));
        }
        if n > w {
            return Err(Error::Data(format!("stream of {n} posts exceeds window {w}")));
        }
        if stream.label >= self.config.classes {
            return Err(Error::IndexOutOfRange {
                what: "label",
                index: stream.label,
                size: self.config.classes,
            });
        }
        let pad = w - n;
        let mut tokens = Vec::with_capacity(w * k);
        let mut token_mask = Vec::with_capacity(w * k);
        for _ in 0..pad {
            tokens.push(CLS);
            tokens.push(SEP);
            tokens.extend(std::iter::repeat_n(PAD, k - 2));
            token_mask.extend([true, true]);
            token_mask.extend(std::iter::repeat_n(false, k - 2));
        }
        for (ids, mask) in stream.tokens.iter().zip(&stream.masks) {
            if ids.len() != k || mask.len() != k {
                return Err(Error::InvalidShape {
                    op: "prepare",
                    detail: format!("post of {} tokens, expected {k}", ids.len()),
                });
            }
            if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab) {
                return Err(Error::IndexOutOfRange {
                    what: "token",
                    index: bad,
                    size: self.config.vocab,
                });
            }
            if ids[0] != CLS || !mask[0] {
                return Err(Error::Data("post does not start with [CLS]".into()));
            }
            tokens.extend_from_slice(ids);
            token_mask.extend_from_slice(mask);
        }
        let mut post_mask = vec![false; pad];
        post_mask.extend(std::iter::repeat_n(true, n));
        let mode = self.time_mode(stream.timestamps.is_some());
        let phases = post_phases(
            mode,
            stream.timestamps.as_deref(),
            n,
            self.config.time_anchor,
            self.config.time_transform,
        )?
        .map(|p| {
            let mut all = vec![0.0; pad];
            all.extend(p);
            all
        });
        Ok(Prepared {
            tokens,
            token_mask,
            post_mask,
            phases,
            label: stream.label,
        })
    }

    pub fn batch(&self, items: &[&Prepared]) -> Result<Batch> {
        let (w, k) = (self.config.window, self.config.max_len);
        if items.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let rotated = items[0].phases.is_some();
        if items.iter().any(|p| p.phases.is_some() != rotated) {
            return Err(Error::Data("batch mixes rotated and unrotated streams".into()));
        }
        let mut b = Batch {
            size: items.len(),
            window: w,
            max_len: k,
            tokens: Vec::with_capacity(items.len() * w * k),
            positions: Vec::with_capacity(items.len() * w * k),
            token_mask: Vec::with_capacity(items.len() * w * k),
            post_mask: Vec::with_capacity(items.len() * w),
            phases: rotated.then(Vec::new),
            labels: Vec::with_capacity(items.len()),
        };
        for p in items {
            if p.tokens.len() != w * k || p.post_mask.len() != w {
                return Err(Error::InvalidShape {
                    op: "batch",
                    detail: "stream prepared for a different window or length".into(),
                });
            }
            b.tokens.extend_from_slice(&p.tokens);
            b.positions.extend((0..w * k).map(|i| i % k));
            b.token_mask.extend_from_slice(&p.token_mask);
            b.post_mask.extend_from_slice(&p.post_mask);
            if let (Some(all), Some(ph)) = (b.phases.as_mut(), p.phases.as_ref()) {
                all.extend_from_slice(ph);
            }
            b.labels.push(p.label);
        }
        Ok(b)
    }

    fn stream_embedding(&self, ctx: &mut Ctx<S>, table: ParamId, batch: &Batch, x: Var) -> Result<Var> {
        let rows: Vec<usize> = (0..batch.tokens.len())
            .map(|r| (r / batch.max_len) % batch.window)
            .collect();
        let t = ctx.p(table);
        let e = ctx.graph.gather_rows(t, &rows)?;
        ctx.graph.add(x, e)
    }

    /// Embedding plus the post-level layers; every post is encoded on its own.
    /// Returns the token states and the pooled CLS of each current post.
    pub fn encode_local(&self, ctx: &mut Ctx<S>, batch: &Batch) -> Result<(Var, Var)> {
        let groups = batch.size * batch.window;
        let mut x = self.layout.embed.embed(ctx, &batch.tokens, &batch.positions)?;
        for layer in &self.layout.local {
            x = layer.forward(ctx, x, &batch.token_mask, groups, batch.max_len)?;
        }
        let current: Vec<usize> = batch
            .current_posts()
            .iter()
            .map(|&p| p * batch.max_len)
            .collect();
        let cls = ctx.graph.gather_rows(x, &current)?;
        let c_local = cls_pool(ctx, cls, &self.layout.pooler)?;
        Ok((x, c_local))
    }

    /// Stream layer, then rotary attention across the posts' CLS vectors,
    /// written back into the CLS slots only.
    pub fn encode_stream(&self, ctx: &mut Ctx<S>, batch: &Batch, h10: Var) -> Result<StreamOutput> {
        let mut x = h10;
        if let Some(s10) = self.layout.s10 {
            x = self.stream_embedding(ctx, s10, batch, x)?;
        }
        let groups = batch.size * batch.window;
        let h11 = self
            .layout
            .stream_layer
            .forward(ctx, x, &batch.token_mask, groups, batch.max_len)?;
        let rows = batch.cls_rows();
        let cls = ctx.graph.gather_rows(h11, &rows)?;
        let att = temporal_rotary_mha_grouped(
            ctx,
            cls,
            batch.phases.as_deref(),
            &batch.post_mask,
            batch.size,
            batch.window,
            &self.layout.stream_mha,
        )?;
        let h11_prime = ctx.graph.scatter_rows(h11, &rows, att.output)?;
        Ok(StreamOutput {
            h11,
            h11_prime,
            weights: att.weights,
        })
    }

    /// Context layer over the replaced states, then a second rotary attention
    /// across the resulting CLS vectors.
    pub fn encode_context(&self, ctx: &mut Ctx<S>, batch: &Batch, h11_prime: Var) -> Result<ContextOutput> {
        let mut x = h11_prime;
        if let Some(s11) = self.layout.s11 {
            x = self.stream_embedding(ctx, s11, batch, x)?;
        }
        let groups = batch.size * batch.window;
        let h12 = self
            .layout
            .context_layer
            .forward(ctx, x, &batch.token_mask, groups, batch.max_len)?;
        let rows = batch.cls_rows();
        let cls = ctx.graph.gather_rows(h12, &rows)?;
        let att = temporal_rotary_mha_grouped(
            ctx,
            cls,
            batch.phases.as_deref(),
            &batch.post_mask,
            batch.size,
            batch.window,
            &self.layout.context_mha,
        )?;
        let h12_prime = ctx.graph.scatter_rows(h12, &rows, att.output)?;
        Ok(ContextOutput {
            h12,
            h12_prime,
            cls,
            cls_prime: att.output,
            weights: att.weights,
        })
    }

    /// `LN((1−g)⊙H + g⊙H')` with `g = σ([H; H']·W_g + b)`; `H'` unchanged
    /// when the gate is ablated.
    pub fn gate_fuse(&self, ctx: &mut Ctx<S>, cls: Var, cls_prime: Var) -> Result<Var> {
        let Some(gate) = self.layout.gate else {
            return Ok(cls_prime);
        };
        let both = ctx.graph.concat_cols(cls, cls_prime)?;
        let z = gate.proj.forward(ctx, both)?;
        let g = ctx.graph.sigmoid(z);
        let delta = ctx.graph.sub(cls_prime, cls)?;
        let moved = ctx.graph.mul(g, delta)?;
        let mixed = ctx.graph.add(cls, moved)?;
        gate.norm.forward(ctx, mixed)
    }

    /// Two ReLU layers and an output map over `features: [B × in]`.
    pub fn classify(&self, ctx: &mut Ctx<S>, features: Var) -> Result<Var> {
        let head = &self.layout.head;
        let rate = self.config.dropout;
        let x = ctx.dropout(features, rate, HEAD_SITE);
        let x = head.fc1.forward(ctx, x)?;
        let x = ctx.graph.relu(x);
        let x = ctx.dropout(x, rate, HEAD_SITE + 1);
        let x = head.fc2.forward(ctx, x)?;
        let x = ctx.graph.relu(x);
        head.out.forward(ctx, x)
    }

    /// Bidirectional recurrence over the pooled fused CLS of the valid posts.
    pub fn ro_tempoformer_features(&self, ctx: &mut Ctx<S>, batch: &Batch, c_global: Var) -> Result<Var> {
        let rnn = self
            .layout
            .recurrent
            .as_ref()
            .ok_or_else(|| Error::Config("model has no recurrent layer".into()))?;
        let pooled = cls_pool(ctx, c_global, &self.layout.pooler)?;
        rnn.encode(ctx, pooled, batch.size, batch.window, &batch.post_mask)
    }

    pub fn forward(&self, ctx: &mut Ctx<S>, batch: &Batch) -> Result<Trace> {
        let (h10, c_local) = self.encode_local(ctx, batch)?;
        let stream = self.encode_stream(ctx, batch, h10)?;
        let context = self.encode_context(ctx, batch, stream.h11_prime)?;
        let c_global = self.gate_fuse(ctx, context.cls, context.cls_prime)?;
        let features = match self.config.variant {
            Variant::TempoFormer => {
                let current = ctx.graph.gather_rows(c_global, &batch.current_posts())?;
                ctx.graph.concat_cols(c_local, current)?
            }
            Variant::RoTempoFormer => self.ro_tempoformer_features(ctx, batch, c_global)?,
        };
        let logits = self.classify(ctx, features)?;
        Ok(Trace {
            h10,
            c_local,
            h11: stream.h11,
            h11_prime: stream.h11_prime,
            h12: context.h12,
            h12_prime: context.h12_prime,
            h12_cls: context.cls,
            h12_cls_prime: context.cls_prime,
            c_global,
            logits,
            stream_weights: stream.weights,
            context_weights: context.weights,
        })
    }

    /// Evaluation-mode logits `[B × classes]`.
    pub fn logits(&self, items: &[&Prepared]) -> Result<Tensor<S>> {
        let batch = self.batch(items)?;
        let mut ctx = Ctx::eval(&self.store);
        let trace = self.forward(&mut ctx, &batch)?;
        Ok(ctx.graph.value(trace.logits).clone())
    }

    /// Class predictions; ties go to the lowest class index.
    pub fn predict(&self, items: &[&Prepared]) -> Result<Vec<usize>> {
        let logits = self.logits(items)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Copies every parameter whose name and shape match one in `other`.
    /// Returns the number of tensors copied.
    pub fn copy_params_from(&mut self, other: &ParamStore<S>) -> usize {
        let mut copied = 0;
        for p in self.store.iter_mut() {
            if let Some(id) = other.find(&p.name) {
                let v = other.value(id);
                if v.shape() == p.value.shape() {
                    p.value = v.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn cast<T: Scalar>(&self) -> TempoFormer<T> {
        TempoFormer {
            config: self.config.clone(),
            flags: self.flags,
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }
}

pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
