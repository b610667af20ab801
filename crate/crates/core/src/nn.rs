//! Transformer building blocks on top of the differentiation graph:
//! parameter storage, embeddings, masked multi-head attention, the post-norm
//! encoder layer and the CLS pooler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-12;

/// Additive bias applied to masked attention scores.
pub const MASK_BIAS: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    /// Whether weight decay applies (false for biases and norm parameters).
    pub decay: bool,
}

/// Named, ordered collection of every trainable tensor of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    entries: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>, decay: bool) -> ParamId {
        self.entries.push(Param {
            name: name.into(),
            value,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    decay: p.decay,
                })
                .collect(),
        }
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Initializer whose stream depends only on `seed` and `name`, so a
    /// module draws the same values whatever other modules exist.
    pub fn for_module(seed: u64, name: &str) -> Self {
        let h = name.bytes().fold(mix(0, seed), |h, b| mix(h, b as u64));
        Self::new(h)
    }

    pub fn normal<S: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<S> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| S::cast_from(dist.sample(&mut self.rng))).collect();
        Tensor::new(shape, data).expect("shape matches")
    }

    /// Glorot-scaled normal weights for a `[fan_in × fan_out]` map.
    pub fn glorot<S: Scalar>(&mut self, fan_in: usize, fan_out: usize) -> Tensor<S> {
        self.normal(&[fan_in, fan_out], (2.0 / (fan_in + fan_out) as f64).sqrt())
    }
}

/// Keys a dropout mask by `(seed, site, step, sample)`.
#[derive(Clone, Copy, Debug)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    pub sample: u64,
}

fn mix(mut h: u64, v: u64) -> u64 {
    // splitmix64 finalizer over a running xor
    h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// A single forward evaluation: the graph being recorded, lazily bound
/// parameter leaves, and the dropout mode.
pub struct Ctx<'p, S: Scalar> {
    pub graph: Graph<S>,
    store: &'p ParamStore<S>,
    bound: Vec<Option<Var>>,
    dropout: Option<DropoutKey>,
    track_grads: bool,
}

impl<'p, S: Scalar> Ctx<'p, S> {
    /// Evaluation context: dropout disabled, parameters recorded as constants.
    pub fn eval(store: &'p ParamStore<S>) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            dropout: None,
            track_grads: false,
        }
    }

    /// Training context with gradients and, when `dropout` is set, inverted
    /// dropout masks drawn from the given key.
    pub fn train(store: &'p ParamStore<S>, dropout: Option<DropoutKey>) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            dropout,
            track_grads: true,
        }
    }

    pub fn store(&self) -> &ParamStore<S> {
        self.store
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    /// Graph leaf for a parameter, created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self
            .graph
            .leaf(self.store.value(id).clone(), self.track_grads);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.graph.constant(t)
    }

    /// Inverted dropout. Identity in evaluation mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, site: u64) -> Var {
        let Some(key) = self.dropout else { return x };
        if rate <= 0.0 {
            return x;
        }
        let h = mix(mix(mix(mix(0, key.seed), site), key.step), key.sample);
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let keep = S::cast_from(1.0 / (1.0 - rate));
        let shape = self.graph.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<S> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let m = self.graph.constant(Tensor::new(&shape, mask).expect("shape"));
        self.graph.mul(x, m).expect("same shape")
    }

    /// Runs `f` against an existing graph. With `params`, parameter `i` is
    /// bound to `params[i]` (which must already live on `graph`); otherwise
    /// parameters are recorded as constants on first use.
    pub fn scoped<R>(
        graph: &mut Graph<S>,
        store: &'p ParamStore<S>,
        params: Option<&[Var]>,
        f: impl FnOnce(&mut Ctx<'p, S>) -> Result<R>,
    ) -> Result<R> {
        let bound = match params {
            Some(p) => {
                assert_eq!(p.len(), store.len(), "one variable per parameter");
                p.iter().copied().map(Some).collect()
            }
            None => vec![None; store.len()],
        };
        let mut ctx = Ctx {
            graph: std::mem::take(graph),
            store,
            bound,
            dropout: None,
            track_grads: false,
        };
        let out = f(&mut ctx);
        *graph = ctx.graph;
        out
    }

    /// Gradients of every parameter that took part in the recorded forward.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<S>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), self.graph.grad_or_zeros(v))))
            .collect()
    }
}

/// Affine map `x·W + b` with `W: [in × out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let mut l = Self::without_bias(store, init, name, fan_in, fan_out);
        l.b = Some(store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]), false));
        l
    }

    pub fn without_bias<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), init.glorot(fan_in, fan_out), true);
        Self { w, b: None }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let w = ctx.p(self.w);
        let y = ctx.graph.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = ctx.p(b);
                ctx.graph.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn param_count<S: Scalar>(&self, store: &ParamStore<S>) -> usize {
        store.value(self.w).len() + self.b.map_or(0, |b| store.value(b).len())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::ones(&[d]), false);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d]), false);
        Self { gain, bias }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.p(self.gain), ctx.p(self.bias));
        ctx.graph.layer_norm(x, g, b, LN_EPS)
    }
}

/// Word and absolute-position lookup tables.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTables {
    pub word: ParamId,
    pub position: ParamId,
}

impl EmbeddingTables {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        vocab: usize,
        max_len: usize,
        d: usize,
    ) -> Self {
        let word = store.add("embed.word", init.normal(&[vocab, d], 0.5), true);
        let position = store.add("embed.position", init.normal(&[max_len, d], 0.5), true);
        Self { word, position }
    }

    /// Row `k` of the output is `word[tokens[k]] + position[positions[k]]`.
    pub fn embed<S: Scalar>(
        &self,
        ctx: &mut Ctx<S>,
        tokens: &[usize],
        positions: &[usize],
    ) -> Result<Var> {
        if tokens.len() != positions.len() {
            return Err(Error::InvalidShape {
                op: "embed",
                detail: format!("{} tokens, {} positions", tokens.len(), positions.len()),
            });
        }
        let (w, p) = (ctx.p(self.word), ctx.p(self.position));
        let words = ctx.graph.gather_rows(w, tokens)?;
        let pos = ctx.graph.gather_rows(p, positions)?;
        ctx.graph.add(words, pos)
    }
}

/// Projection maps for multi-head attention over a `d`-wide residual stream.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        d: usize,
        heads: usize,
    ) -> Result<Self> {
        Self::build(store, init, name, d, heads, true)
    }

    /// Without rotation a key bias only shifts each score row by a constant,
    /// which softmax ignores, so unrotated attention omits it.
    pub fn build<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        d: usize,
        heads: usize,
        key_bias: bool,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) || !(d / heads).is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hidden size {d} must split into {heads} heads of even width"
            )));
        }
        Ok(Self {
            query: Linear::new(store, init, &format!("{name}.query"), d, d),
            key: if key_bias {
                Linear::new(store, init, &format!("{name}.key"), d, d)
            } else {
                Linear::without_bias(store, init, &format!("{name}.key"), d, d)
            },
            value: Linear::new(store, init, &format!("{name}.value"), d, d),
            output: Linear::new(store, init, &format!("{name}.output"), d, d),
            heads,
        })
    }

    pub fn param_count<S: Scalar>(&self, store: &ParamStore<S>) -> usize {
        [self.query, self.key, self.value, self.output]
            .iter()
            .map(|l| l.param_count(store))
            .sum()
    }
}

/// Cosine/sine tables `[seq × head_dim/2]` that rotate query and key rows,
/// either shared by every group or stacked one table per group.
#[derive(Clone, Debug)]
pub struct RotaryTables {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

/// Result of an attention evaluation; `weights` is `[groups·heads × seq × seq]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

/// Masked multi-head self-attention over `groups` independent sequences of
/// length `seq`, laid out as `x: [groups·seq × d]`.
///
/// `mask[g·seq + j]` marks key `j` of group `g` as valid. When `rotary` is
/// given, queries and keys of every head are rotated before the dot products.
pub fn attention<S: Scalar>(
    ctx: &mut Ctx<S>,
    x: Var,
    mask: &[bool],
    groups: usize,
    seq: usize,
    params: &AttentionParams,
    rotary: Option<&RotaryTables>,
) -> Result<AttentionOutput> {
    let rows = ctx.graph.value(x).rows();
    if rows != groups * seq || mask.len() != rows {
        return Err(Error::InvalidShape {
            op: "attention",
            detail: format!(
                "{rows} rows, mask of {} for {groups} groups of {seq}",
                mask.len()
            ),
        });
    }
    for g in 0..groups {
        if !mask[g * seq..(g + 1) * seq].iter().any(|&m| m) {
            return Err(Error::AllMasked { row: g * seq });
        }
    }
    let heads = params.heads;
    let d = ctx.graph.value(x).last_dim();
    let dh = d / heads;

    let q = params.query.forward(ctx, x)?;
    let k = params.key.forward(ctx, x)?;
    let v = params.value.forward(ctx, x)?;
    let mut q = ctx.graph.split_heads(q, groups, seq, heads)?;
    let mut k = ctx.graph.split_heads(k, groups, seq, heads)?;
    let v = ctx.graph.split_heads(v, groups, seq, heads)?;
    if let Some(rt) = rotary {
        let cos: Vec<S> = rt.cos.iter().map(|&c| S::cast_from(c)).collect();
        let sin: Vec<S> = rt.sin.iter().map(|&c| S::cast_from(c)).collect();
        q = ctx.graph.rotary(q, cos.clone(), sin.clone(), seq, heads * seq)?;
        k = ctx.graph.rotary(k, cos, sin, seq, heads * seq)?;
    }
    let scores = ctx.graph.batch_matmul(q, k, true)?;
    let scores = ctx.graph.scale(scores, 1.0 / (dh as f64).sqrt());

    let mut bias = vec![S::zero(); groups * heads * seq * seq];
    let masked = S::cast_from(MASK_BIAS);
    for g in 0..groups {
        for h in 0..heads {
            for i in 0..seq {
                let base = ((g * heads + h) * seq + i) * seq;
                for j in 0..seq {
                    if !mask[g * seq + j] {
                        bias[base + j] = masked;
                    }
                }
            }
        }
    }
    let bias = ctx.constant(Tensor::new(&[groups * heads, seq, seq], bias)?);
    let scores = ctx.graph.add(scores, bias)?;
    let weights = ctx.graph.softmax_rows(scores)?;
    let mixed = ctx.graph.batch_matmul(weights, v, false)?;
    let merged = ctx.graph.merge_heads(mixed, groups, seq, heads)?;
    let output = params.output.forward(ctx, merged)?;
    Ok(AttentionOutput { output, weights })
}

/// Single-sequence convenience wrapper around [`attention`].
pub fn multi_head_attention<S: Scalar>(
    ctx: &mut Ctx<S>,
    x: Var,
    mask: &[bool],
    params: &AttentionParams,
) -> Result<Var> {
    let seq = ctx.graph.value(x).rows();
    Ok(attention(ctx, x, mask, 1, seq, params, None)?.output)
}

/// Post-norm transformer encoder layer with a GELU feed-forward block.
#[derive(Clone, Copy, Debug)]
pub struct EncoderLayerParams {
    pub attention: AttentionParams,
    pub attn_norm: LayerNormParams,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ff_norm: LayerNormParams,
    pub dropout: f64,
    /// Distinguishes this layer's dropout streams from other layers'.
    pub site: u64,
}

impl EncoderLayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        d: usize,
        heads: usize,
        d_ff: usize,
        dropout: f64,
        site: u64,
    ) -> Result<Self> {
        if d_ff < d {
            return Err(Error::Config(format!("d_ff {d_ff} smaller than d {d}")));
        }
        Ok(Self {
            attention: AttentionParams::build(
                store,
                init,
                &format!("{name}.attention"),
                d,
                heads,
                false,
            )?,
            attn_norm: LayerNormParams::new(store, &format!("{name}.attention_norm"), d),
            ff_in: Linear::new(store, init, &format!("{name}.ff_in"), d, d_ff),
            ff_out: Linear::new(store, init, &format!("{name}.ff_out"), d_ff, d),
            ff_norm: LayerNormParams::new(store, &format!("{name}.ff_norm"), d),
            dropout,
            site,
        })
    }

    /// `y = LN(x + Drop(MHA(x)))`, then `LN(y + Drop(FFN(y)))`, over
    /// `groups` independent sequences.
    pub fn forward<S: Scalar>(
        &self,
        ctx: &mut Ctx<S>,
        x: Var,
        mask: &[bool],
        groups: usize,
        seq: usize,
    ) -> Result<Var> {
        let a = attention(ctx, x, mask, groups, seq, &self.attention, None)?.output;
        let a = ctx.dropout(a, self.dropout, self.site * 4);
        let y = ctx.graph.add(x, a)?;
        let y = self.attn_norm.forward(ctx, y)?;

        let h = self.ff_in.forward(ctx, y)?;
        let h = ctx.graph.gelu(h);
        let h = self.ff_out.forward(ctx, h)?;
        let h = ctx.dropout(h, self.dropout, self.site * 4 + 1);
        let z = ctx.graph.add(y, h)?;
        self.ff_norm.forward(ctx, z)
    }

    pub fn param_count<S: Scalar>(&self, store: &ParamStore<S>) -> usize {
        self.attention.param_count(store)
            + self.ff_in.param_count(store)
            + self.ff_out.param_count(store)
            + 4 * store.value(self.attn_norm.gain).len()
    }
}

/// `tanh(W·h + b)` over CLS rows.
pub fn cls_pool<S: Scalar>(ctx: &mut Ctx<S>, h_cls: Var, dense: &Linear) -> Result<Var> {
    let y = dense.forward(ctx, h_cls)?;
    Ok(ctx.graph.tanh(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(store: &mut ParamStore<f64>, id: ParamId, data: &[f64]) {
        let shape = store.value(id).shape().to_vec();
        *store.value_mut(id) = Tensor::from_f64(&shape, data).unwrap();
    }

    fn zero_all(store: &mut ParamStore<f64>) {
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
    }

    #[test]
    fn embed_adds_lookup_rows() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(0);
        let emb = EmbeddingTables::new(&mut store, &mut init, 3, 2, 3);
        set(&mut store, emb.word, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        set(&mut store, emb.position, &[1., 0., 0., 0., 1., 0.]);
        let mut ctx = Ctx::eval(&store);
        let y = emb.embed(&mut ctx, &[2, 0], &[1, 0]).unwrap();
        assert_eq!(ctx.graph.value(y).data(), &[0., 1., 1., 2., 0., 0.]);

        let err = emb.embed(&mut ctx, &[3], &[0]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 3, .. }));
    }

    #[test]
    fn all_pad_post_gives_identical_rows_at_equal_positions() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(1);
        let emb = EmbeddingTables::new(&mut store, &mut init, 5, 4, 2);
        let pos_row = store.value(emb.position).row(0).to_vec();
        set(
            &mut store,
            emb.position,
            &[pos_row.clone(), pos_row.clone(), pos_row.clone(), pos_row].concat(),
        );
        let mut ctx = Ctx::eval(&store);
        let y = emb.embed(&mut ctx, &[2, 2, 2], &[0, 1, 2]).unwrap();
        let v = ctx.graph.value(y);
        assert_eq!(v.row(0), v.row(1));
        assert_eq!(v.row(1), v.row(2));
    }

    #[test]
    fn attention_rejects_fully_masked_group() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(2);
        let p = AttentionParams::new(&mut store, &mut init, "a", 4, 2).unwrap();
        let mut ctx = Ctx::eval(&store);
        let x = ctx.constant(Tensor::ones(&[4, 4]));
        let err = attention(&mut ctx, x, &[true, true, false, false], 2, 2, &p, None).unwrap_err();
        assert!(matches!(err, Error::AllMasked { row: 2 }));
    }

    #[test]
    fn odd_head_width_rejected() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(2);
        assert!(AttentionParams::new(&mut store, &mut init, "a", 6, 2).is_err());
        assert!(AttentionParams::new(&mut store, &mut init, "a", 6, 4).is_err());
    }

    #[test]
    fn singleton_attention_is_value_then_output_map() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(3);
        let p = AttentionParams::new(&mut store, &mut init, "a", 4, 2).unwrap();
        let xt = Tensor::from_f64(&[1, 4], &[0.3, -0.1, 0.8, 0.5]).unwrap();
        let want = {
            let v = xt.matmul(store.value(p.value.w)).unwrap();
            v.matmul(store.value(p.output.w)).unwrap()
        };
        let mut ctx = Ctx::eval(&store);
        let x = ctx.constant(xt);
        let y = multi_head_attention(&mut ctx, x, &[true], &p).unwrap();
        assert!(ctx.graph.value(y).max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn two_token_single_head_matches_hand_arithmetic() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(4);
        let p = AttentionParams::new(&mut store, &mut init, "a", 2, 1).unwrap();
        set(&mut store, p.query.w, &[1., 0., 0., 1.]);
        set(&mut store, p.key.w, &[2., 0., 0., 1.]);
        set(&mut store, p.value.w, &[1., 1., 0., 1.]);
        set(&mut store, p.output.w, &[1., 0., 0., 1.]);
        // x rows: a=(1,0), b=(0,1)
        // q=a,b; k=(2,0),(0,1); v=(1,1),(0,1)
        // row a scores /√2: (2/√2, 0); row b: (0, 1/√2)
        let s2 = 2f64.sqrt();
        let wa = [(2.0 / s2).exp(), 1.0];
        let wb = [1.0, (1.0 / s2).exp()];
        let (za, zb) = (wa[0] + wa[1], wb[0] + wb[1]);
        let want = [
            wa[0] / za,
            (wa[0] + wa[1]) / za,
            wb[0] / zb,
            (wb[0] + wb[1]) / zb,
        ];
        let mut ctx = Ctx::eval(&store);
        let x = ctx.constant(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
        let y = multi_head_attention(&mut ctx, x, &[true, true], &p).unwrap();
        for (a, b) in ctx.graph.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn masked_keys_get_exactly_zero_weight() {
        let mut store = ParamStore::<f32>::new();
        let mut init = Init::new(5);
        let p = AttentionParams::new(&mut store, &mut init, "a", 8, 2).unwrap();
        let mut init2 = Init::new(6);
        let mut ctx = Ctx::eval(&store);
        let x = ctx.constant(init2.normal(&[4, 8], 1.0));
        let mask = [true, false, true, false];
        let out = attention(&mut ctx, x, &mask, 1, 4, &p, None).unwrap();
        let w = ctx.graph.value(out.weights);
        for r in 0..w.rows() {
            let row = w.row(r);
            assert_eq!(row[1], 0.0);
            assert_eq!(row[3], 0.0);
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn encoder_with_zero_weights_is_double_layer_norm() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(7);
        let layer = EncoderLayerParams::new(&mut store, &mut init, "l", 4, 2, 8, 0.0, 0).unwrap();
        for p in store.iter_mut() {
            if !p.name.ends_with(".gain") {
                p.value.fill(0.0);
            }
        }
        let xt = Tensor::from_f64(&[2, 4], &[1., 2., 3., 5., -1., 0., 4., 4.]).unwrap();
        let mut ctx = Ctx::eval(&store);
        let x = ctx.constant(xt.clone());
        let y = layer.forward(&mut ctx, x, &[true, true], 1, 2).unwrap();
        let one = ctx.constant(Tensor::ones(&[4]));
        let zero = ctx.constant(Tensor::zeros(&[4]));
        let x2 = ctx.constant(xt);
        let l1 = ctx.graph.layer_norm(x2, one, zero, LN_EPS).unwrap();
        let l2 = ctx.graph.layer_norm(l1, one, zero, LN_EPS).unwrap();
        assert!(ctx.graph.value(y).max_abs_diff(ctx.graph.value(l2)) < 1e-12);
    }

    #[test]
    fn encoder_train_with_zero_dropout_equals_eval() {
        let mut store = ParamStore::<f32>::new();
        let mut init = Init::new(8);
        let layer = EncoderLayerParams::new(&mut store, &mut init, "l", 8, 2, 16, 0.0, 3).unwrap();
        let xt: Tensor<f32> = Init::new(9).normal(&[3, 8], 1.0);
        let run = |ctx: &mut Ctx<f32>| {
            let x = ctx.constant(xt.clone());
            let y = layer.forward(ctx, x, &[true, true, false], 1, 3).unwrap();
            ctx.graph.value(y).clone()
        };
        let key = DropoutKey {
            seed: 1,
            step: 2,
            sample: 3,
        };
        let a = run(&mut Ctx::eval(&store));
        let b = run(&mut Ctx::train(&store, Some(key)));
        assert_eq!(a, b);
    }

    #[test]
    fn single_token_encoder_matches_manual_trace() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(10);
        let layer = EncoderLayerParams::new(&mut store, &mut init, "l", 2, 1, 2, 0.0, 0).unwrap();
        zero_all(&mut store);
        set(&mut store, layer.attention.value.w, &[1., 0., 0., 1.]);
        set(&mut store, layer.attention.output.w, &[0.5, 0., 0., 0.5]);
        set(&mut store, layer.attn_norm.gain, &[1., 1.]);
        set(&mut store, layer.ff_in.w, &[1., 0., 0., 1.]);
        set(&mut store, layer.ff_out.w, &[1., 0., 0., 1.]);
        set(&mut store, layer.ff_norm.gain, &[2., 2.]);
        set(&mut store, layer.ff_norm.bias, &[0.5, 0.5]);

        // x = (3, 1); attention over one token = 0.5·x = (1.5, 0.5)
        // y = LN((4.5, 1.5)) = (1, -1)
        // ffn = gelu((1, -1)); z = y + ffn; out = 2·LN(z) + 0.5
        let gelu = |v: f64| {
            0.5 * v * (1.0 + (0.797_884_560_802_865_4 * (v + 0.044_715 * v * v * v)).tanh())
        };
        let z = [1.0 + gelu(1.0), -1.0 + gelu(-1.0)];
        let mean = (z[0] + z[1]) / 2.0;
        let std = (((z[0] - mean).powi(2) + (z[1] - mean).powi(2)) / 2.0 + LN_EPS).sqrt();
        let want = [
            2.0 * (z[0] - mean) / std + 0.5,
            2.0 * (z[1] - mean) / std + 0.5,
        ];
        let mut ctx = Ctx::eval(&store);
        let x = ctx.constant(Tensor::from_f64(&[1, 2], &[3., 1.]).unwrap());
        let y = layer.forward(&mut ctx, x, &[true], 1, 1).unwrap();
        let got = ctx.graph.value(y).data();
        assert!((got[0] - want[0]).abs() < 1e-10 && (got[1] - want[1]).abs() < 1e-10);
    }

    #[test]
    fn pooler_cases() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(11);
        let dense = Linear::new(&mut store, &mut init, "pool", 3, 3);
        let h = Tensor::from_f64(&[1, 3], &[0.5, 0.5, 0.5]).unwrap();

        zero_all(&mut store);
        let mut ctx = Ctx::eval(&store);
        let x = ctx.constant(h.clone());
        let y = cls_pool(&mut ctx, x, &dense).unwrap();
        assert_eq!(ctx.graph.value(y).data(), &[0.0, 0.0, 0.0]);

        *store.value_mut(dense.w) = Tensor::eye(3);
        let mut ctx = Ctx::eval(&store);
        let x = ctx.constant(h);
        let y = cls_pool(&mut ctx, x, &dense).unwrap();
        for &v in ctx.graph.value(y).data() {
            assert!((v - 0.462_117_157_260_009_8).abs() < 1e-12);
        }
    }
}
