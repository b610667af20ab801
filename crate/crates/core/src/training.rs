//! Alpha-weighted focal loss, class weights and the AdamW training loop with
//! a linear learning-rate decay, gradient accumulation and early stopping on
//! dev macro-F1.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedStream, LabelSet, CLS, PAD, SEP, UNK};
use crate::error::{Error, Result};
use crate::evaluation::f1_scores;
use crate::model::{AblationFlags, ModelConfig, Prepared, TempoFormer};
use crate::nn::{Ctx, DropoutKey, ParamStore};
use crate::tensor::{grad_check, GradCheckReport, Graph, Scalar, Tensor, Var};

/// `α_c = sqrt(1 / p_c)` with `p_c` the empirical class frequency.
pub fn compute_alpha(counts: &[usize], labels: &LabelSet) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                Err(Error::EmptyClass(labels.name(c).to_string()))
            } else {
                Ok((total as f64 / n as f64).sqrt())
            }
        })
        .collect()
}

/// Label counts over `classes` classes.
pub fn class_counts(items: &[Prepared], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for p in items {
        counts[p.label] += 1;
    }
    counts
}

/// Mean over the batch of `−α_y·(1 − p_y)^γ·ln p_y` with `p = softmax(logits)`.
pub fn focal_loss<S: Scalar>(
    g: &mut Graph<S>,
    logits: Var,
    labels: &[usize],
    alpha: &[f64],
    gamma: f64,
) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::Data("focal loss over an empty batch".into()));
    }
    if gamma < 0.0 {
        return Err(Error::Config(format!("focal gamma {gamma} must be non-negative")));
    }
    let log_p = g.log_softmax_rows(logits)?;
    let log_py = g.pick(log_p, labels)?;
    let py = g.exp(log_py);
    let miss = g.affine(py, -1.0, 1.0);
    let modulator = g.powf(miss, gamma);
    let weighted = g.mul(modulator, log_py)?;
    let a: Vec<S> = labels
        .iter()
        .map(|&y| {
            alpha.get(y).copied().map(S::cast_from).ok_or(Error::IndexOutOfRange {
                what: "alpha",
                index: y,
                size: alpha.len(),
            })
        })
        .collect::<Result<_>>()?;
    let a = g.constant(Tensor::new(&[labels.len()], a)?);
    let weighted = g.mul(weighted, a)?;
    let mean = g.mean(weighted);
    Ok(g.scale(mean, -1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Micro-batches per optimizer update.
    pub accumulation: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            patience: 3,
            gamma: 2.0,
            lr: 1e-3,
            batch_size: 16,
            accumulation: 1,
            weight_decay: 0.01,
            seed: 0,
            eval_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.accumulation == 0 || self.eval_batch == 0 {
            return Err(Error::Config(
                "epochs, batch_size, accumulation and eval_batch must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("lr, weight_decay and gamma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Decoupled-weight-decay Adam.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<S: Scalar>(store: &ParamStore<S>, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update with gradients aligned to the store's parameter order.
    pub fn step<S: Scalar>(&mut self, store: &mut ParamStore<S>, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in store.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            for (j, x) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                let old = x.as_f64();
                *x = S::cast_from(old - lr * (update + decay * old));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
    pub dev_class_f1: Vec<f64>,
    pub improved: bool,
}

pub struct TrainOutcome<S: Scalar> {
    /// Parameters of the epoch with the best dev macro-F1.
    pub best: TempoFormer<S>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Class predictions in evaluation mode, `batch` streams at a time.
pub fn predict_all<S: Scalar>(model: &TempoFormer<S>, items: &[Prepared], batch: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch.max(1)) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        out.extend(model.predict(&refs)?);
    }
    Ok(out)
}

/// Accumulated gradient of the micro-batch losses, each scaled by `weight`.
/// Returns the unscaled mean loss of every micro-batch.
fn accumulate<S: Scalar>(
    model: &TempoFormer<S>,
    micro: &[&[usize]],
    items: &[Prepared],
    alpha: &[f64],
    cfg: &TrainConfig,
    step: usize,
    grads: &mut [Vec<f64>],
) -> Result<Vec<f64>> {
    let weight = 1.0 / micro.len() as f64;
    let mut losses = Vec::with_capacity(micro.len());
    for (i, idx) in micro.iter().enumerate() {
        let refs: Vec<&Prepared> = idx.iter().map(|&j| &items[j]).collect();
        let batch = model.batch(&refs)?;
        let key = (model.config().dropout > 0.0).then_some(DropoutKey {
            seed: cfg.seed,
            step: step as u64,
            sample: i as u64,
        });
        let mut ctx = Ctx::train(model.store(), key);
        let trace = model.forward(&mut ctx, &batch)?;
        let loss = focal_loss(&mut ctx.graph, trace.logits, &batch.labels, alpha, cfg.gamma)?;
        let value = ctx.graph.value(loss).item().as_f64();
        losses.push(value);
        if !value.is_finite() {
            return Ok(losses);
        }
        let scaled = ctx.graph.scale(loss, weight);
        ctx.graph.backward(scaled)?;
        for (id, g) in ctx.param_grads() {
            for (a, b) in grads[id.index()].iter_mut().zip(g.data()) {
                *a += b.as_f64();
            }
        }
    }
    Ok(losses)
}

/// Gradient of one optimizer update built from the first
/// `accumulation` micro-batches of the epoch-0 ordering; exposed for checks.
pub fn first_update_gradient<S: Scalar>(
    model: &TempoFormer<S>,
    items: &[Prepared],
    alpha: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<Vec<f64>>> {
    let order = epoch_order(items.len(), cfg.seed, 0);
    let micro: Vec<&[usize]> = order.chunks(cfg.batch_size).take(cfg.accumulation).collect();
    let mut grads = zero_grads(model.store());
    accumulate(model, &micro, items, alpha, cfg, 0, &mut grads)?;
    Ok(grads)
}

fn zero_grads<S: Scalar>(store: &ParamStore<S>) -> Vec<Vec<f64>> {
    store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect()
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    order
}

/// Trains `model` and returns the best-dev snapshot. `on_epoch` sees every
/// epoch record together with the current parameters.
pub fn train<S: Scalar>(
    mut model: TempoFormer<S>,
    train_items: &[Prepared],
    dev_items: &[Prepared],
    alpha: &[f64],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &TempoFormer<S>) -> Result<()>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train_items.is_empty() || dev_items.is_empty() {
        return Err(Error::Data("training needs non-empty train and dev sets".into()));
    }
    let classes = model.config().classes;
    let micro_per_epoch = train_items.len().div_ceil(cfg.batch_size);
    let updates_per_epoch = micro_per_epoch.div_ceil(cfg.accumulation);
    let total = (updates_per_epoch * cfg.epochs) as f64;
    let mut opt = AdamW::new(model.store(), cfg.weight_decay);
    let dev_golds: Vec<usize> = dev_items.iter().map(|p| p.label).collect();

    let mut step = 0usize;
    let mut history = Vec::new();
    let mut best: Option<(TempoFormer<S>, usize, f64)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(train_items.len(), cfg.seed, epoch);
        let micro: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut loss_sum = 0.0;
        for group in micro.chunks(cfg.accumulation) {
            let mut grads = zero_grads(model.store());
            let losses = accumulate(&model, group, train_items, alpha, cfg, step, &mut grads)?;
            if let Some(&bad) = losses.iter().find(|l| !l.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    value: bad,
                });
            }
            loss_sum += losses.iter().sum::<f64>();
            let lr = cfg.lr * (1.0 - step as f64 / total);
            opt.step(model.store_mut(), &grads, lr);
            step += 1;
        }
        let preds = predict_all(&model, dev_items, cfg.eval_batch)?;
        let scores = f1_scores(&preds, &dev_golds, classes)?;
        let improved = best.as_ref().is_none_or(|b| scores.macro_f1 > b.2);
        if improved {
            best = Some((model.clone(), epoch, scores.macro_f1));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            steps: step,
            train_loss: loss_sum / micro.len() as f64,
            dev_macro_f1: scores.macro_f1,
            dev_class_f1: scores.f1.clone(),
            improved,
        };
        on_epoch(&record, &model)?;
        history.push(record);
        if since_best > 0 && since_best >= cfg.patience {
            stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    let (best, best_epoch, best_dev_f1) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_dev_f1,
        history,
        stopped_early,
    })
}

/// Random streams that exercise padding: lengths `1..=window`, ragged post
/// lengths and increasing timestamps.
pub fn random_streams(cfg: &ModelConfig, count: usize, seed: u64) -> Vec<EncodedStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = if i == 0 { cfg.window } else { rng.gen_range(1..=cfg.window) };
            let mut t = 1.6e9;
            let mut timestamps = Vec::with_capacity(n);
            let (tokens, masks) = (0..n)
                .map(|_| {
                    t += rng.gen_range(1.0..90_000.0f64).round();
                    timestamps.push(t);
                    let content = rng.gen_range(1..=cfg.max_len - 2);
                    let mut ids = vec![CLS];
                    ids.extend((0..content).map(|_| rng.gen_range(UNK..cfg.vocab)));
                    ids.push(SEP);
                    let mut mask = vec![true; ids.len()];
                    ids.resize(cfg.max_len, PAD);
                    mask.resize(cfg.max_len, false);
                    (ids, mask)
                })
                .unzip();
            EncodedStream {
                tokens,
                masks,
                timestamps: Some(timestamps),
                label: rng.gen_range(0..cfg.classes),
            }
        })
        .collect()
}

/// Central-difference check of the focal loss of a whole model with respect
/// to every parameter, in 64-bit, on a batch of `streams` random streams.
pub fn model_gradient_check(
    cfg: &ModelConfig,
    flags: AblationFlags,
    streams: usize,
    seed: u64,
    eps: f64,
) -> Result<GradCheckReport> {
    let model = TempoFormer::<f64>::new(ModelConfig { dropout: 0.0, ..cfg.clone() }, flags)?;
    let prepared = random_streams(model.config(), streams, seed)
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Prepared> = prepared.iter().collect();
    let batch = model.batch(&refs)?;
    let alpha: Vec<f64> = (0..cfg.classes).map(|c| 0.7 + 0.3 * c as f64).collect();
    let inputs: Vec<Tensor<f64>> = model.store().iter().map(|(_, p)| p.value.clone()).collect();
    grad_check(
        |g, vars| {
            let logits = Ctx::scoped(g, model.store(), Some(vars), |ctx| Ok(model.forward(ctx, &batch)?.logits))?;
            focal_loss(g, logits, &batch.labels, &alpha, 2.0)
        },
        &inputs,
        eps,
    )
}
