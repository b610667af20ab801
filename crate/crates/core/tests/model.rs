mod common;

use common::{model, prepare_all, random_stream, rng, tiny_config};
use rand::Rng;
use tempoformer::model::{
    AblationFlags, Checkpoint, ModelConfig, Prepared, TempoFormer, TimeMode, TimeTransform,
    Variant,
};
use tempoformer::nn::{multi_head_attention, Ctx, LN_EPS};
use tempoformer::rotary::TimeAnchor;
use tempoformer::tensor::{grad_check, Tensor};
use tempoformer::data::{LabelSet, Vocabulary};

fn run<'m>(m: &'m TempoFormer<f64>, items: &[Prepared]) -> (Ctx<'m, f64>, tempoformer::model::Trace) {
    let refs: Vec<&Prepared> = items.iter().collect();
    let batch = m.batch(&refs).unwrap();
    let mut ctx = Ctx::eval(m.store());
    let trace = m.forward(&mut ctx, &batch).unwrap();
    (ctx, trace)
}

fn set(m: &mut TempoFormer<f64>, name: &str, data: &[f64]) {
    let id = m.store().find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let shape = m.store().value(id).shape().to_vec();
    *m.store_mut().value_mut(id) = Tensor::from_f64(&shape, data).unwrap();
}

fn zero(m: &mut TempoFormer<f64>, name: &str) {
    let id = m.store().find(name).unwrap();
    m.store_mut().value_mut(id).fill(0.0);
}

fn layer_norm(row: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    row.iter().map(|x| (x - mean) / (var + LN_EPS).sqrt()).collect()
}

#[test]
fn single_post_local_states_match_a_plain_encoder() {
    let cfg = ModelConfig {
        window: 1,
        ..tiny_config()
    };
    let m = model::<f64>(&cfg, AblationFlags::default());
    let s = random_stream(&mut rng(1), &cfg, 1, true);
    let (ctx, trace) = run(&m, &prepare_all(&m, std::slice::from_ref(&s)));

    let mut plain = Ctx::eval(m.store());
    let positions: Vec<usize> = (0..cfg.max_len).collect();
    let mut x = m.embedding().embed(&mut plain, &s.tokens[0], &positions).unwrap();
    for layer in m.local_layers() {
        x = layer.forward(&mut plain, x, &s.masks[0], 1, cfg.max_len).unwrap();
    }
    assert_eq!(ctx.graph.value(trace.h10), plain.graph.value(x));
}

#[test]
fn local_states_follow_a_post_permutation() {
    let cfg = tiny_config();
    let m = model::<f64>(&cfg, AblationFlags::default());
    let s = random_stream(&mut rng(2), &cfg, 3, true);
    let mut swapped = s.clone();
    swapped.tokens.swap(0, 1);
    swapped.masks.swap(0, 1);
    let (ca, ta) = run(&m, &prepare_all(&m, &[s]));
    let (cb, tb) = run(&m, &prepare_all(&m, &[swapped]));
    let (a, b) = (ca.graph.value(ta.h10), cb.graph.value(tb.h10));
    let k = cfg.max_len;
    for r in 0..k {
        assert_eq!(a.row(r), b.row(k + r));
        assert_eq!(a.row(k + r), b.row(r));
        assert_eq!(a.row(2 * k + r), b.row(2 * k + r));
    }
}

#[test]
fn zero_weights_leave_normalized_embeddings() {
    let cfg = tiny_config();
    let mut m = model::<f64>(&cfg, AblationFlags::default());
    let names: Vec<String> = m
        .store()
        .iter()
        .map(|(_, p)| p.name.clone())
        .filter(|n| n.starts_with("local.") && n.ends_with(".weight"))
        .collect();
    for n in &names {
        zero(&mut m, n);
    }
    let s = random_stream(&mut rng(3), &cfg, 3, true);
    let (ctx, trace) = run(&m, &prepare_all(&m, std::slice::from_ref(&s)));
    let word = m.store().value(m.embedding().word).clone();
    let pos = m.store().value(m.embedding().position).clone();
    let h10 = ctx.graph.value(trace.h10);
    for (p, ids) in s.tokens.iter().enumerate() {
        for (k, &id) in ids.iter().enumerate() {
            let e: Vec<f64> = word.row(id).iter().zip(pos.row(k)).map(|(a, b)| a + b).collect();
            let want = layer_norm(&layer_norm(&e));
            let got = h10.row(p * cfg.max_len + k);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn stream_attention_only_replaces_cls_rows() {
    let cfg = tiny_config();
    let m = model::<f64>(&cfg, AblationFlags::default());
    let mut r = rng(4);
    let streams = vec![random_stream(&mut r, &cfg, 3, true), random_stream(&mut r, &cfg, 1, true)];
    let (ctx, t) = run(&m, &prepare_all(&m, &streams));
    for (before, after) in [(t.h11, t.h11_prime), (t.h12, t.h12_prime)] {
        let (a, b) = (ctx.graph.value(before), ctx.graph.value(after));
        for row in 0..a.rows() {
            if row % cfg.max_len != 0 {
                assert_eq!(a.row(row), b.row(row));
            }
        }
    }
}

#[test]
fn singleton_stream_attention_is_the_value_output_map() {
    let cfg = ModelConfig {
        window: 1,
        ..tiny_config()
    };
    let m = model::<f64>(&cfg, AblationFlags::default());
    let s = random_stream(&mut rng(5), &cfg, 1, true);
    let (ctx, t) = run(&m, &prepare_all(&m, &[s]));
    let cls = Tensor::from_f64(&[1, cfg.d], ctx.graph.value(t.h11).row(0)).unwrap();
    let att = m.stream_mha().attention;
    let st = m.store();
    let mut v = cls.matmul(st.value(att.value.w)).unwrap();
    v.add_assign(&st.value(att.value.b.unwrap()).clone().reshape(&[1, cfg.d]).unwrap());
    let mut o = v.matmul(st.value(att.output.w)).unwrap();
    o.add_assign(&st.value(att.output.b.unwrap()).clone().reshape(&[1, cfg.d]).unwrap());
    let got = ctx.graph.value(t.h11_prime).row(0);
    for (g, w) in got.iter().zip(o.data()) {
        assert!((g - w).abs() < 1e-12);
    }
    for row in 1..cfg.max_len {
        assert_eq!(ctx.graph.value(t.h11).row(row), ctx.graph.value(t.h11_prime).row(row));
    }
}

#[test]
fn two_post_vanilla_attention_by_hand() {
    let cfg = ModelConfig {
        d: 2,
        heads: 1,
        d_ff: 4,
        window: 2,
        ..tiny_config()
    };
    let flags = AblationFlags {
        no_rope_mha: true,
        ..AblationFlags::default()
    };
    let mut m = model::<f64>(&cfg, flags);
    set(&mut m, "stream.mha.query.weight", &[1.0, 0.5, -0.5, 2.0]);
    set(&mut m, "stream.mha.key.weight", &[0.3, 0.0, 1.0, -1.0]);
    set(&mut m, "stream.mha.value.weight", &[2.0, 1.0, 0.0, 1.0]);
    set(&mut m, "stream.mha.output.weight", &[1.0, -1.0, 0.5, 0.5]);
    let s = random_stream(&mut rng(6), &cfg, 2, true);
    let (ctx, t) = run(&m, &prepare_all(&m, &[s]));
    let h11 = ctx.graph.value(t.h11);
    let c = [h11.row(0).to_vec(), h11.row(cfg.max_len).to_vec()];
    let lin = |x: &[f64], w: [f64; 4]| [x[0] * w[0] + x[1] * w[2], x[0] * w[1] + x[1] * w[3]];
    let q: Vec<[f64; 2]> = c.iter().map(|x| lin(x, [1.0, 0.5, -0.5, 2.0])).collect();
    let k: Vec<[f64; 2]> = c.iter().map(|x| lin(x, [0.3, 0.0, 1.0, -1.0])).collect();
    let v: Vec<[f64; 2]> = c.iter().map(|x| lin(x, [2.0, 1.0, 0.0, 1.0])).collect();
    for i in 0..2 {
        let s: Vec<f64> = (0..2)
            .map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt())
            .collect();
        let mx = s[0].max(s[1]);
        let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
        let a: Vec<f64> = e.iter().map(|x| x / (e[0] + e[1])).collect();
        let mixed = [a[0] * v[0][0] + a[1] * v[1][0], a[0] * v[0][1] + a[1] * v[1][1]];
        let want = lin(&mixed, [1.0, -1.0, 0.5, 0.5]);
        let got = ctx.graph.value(t.h11_prime).row(i * cfg.max_len);
        assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
    }
}

#[test]
fn zero_s11_table_makes_its_ablation_a_no_op() {
    let cfg = tiny_config();
    let mut full = model::<f64>(&cfg, AblationFlags::default());
    zero(&mut full, "context.s11");
    let mut ablated = model::<f64>(
        &cfg,
        AblationFlags {
            no_stream_embed_s11: true,
            ..AblationFlags::default()
        },
    );
    assert_eq!(ablated.copy_params_from(full.store()), ablated.store().len());
    let mut r = rng(7);
    let streams: Vec<_> = (1..=3).map(|n| random_stream(&mut r, &cfg, n, true)).collect();
    let a: Vec<Prepared> = prepare_all(&full, &streams);
    let b: Vec<Prepared> = prepare_all(&ablated, &streams);
    let ra: Vec<&Prepared> = a.iter().collect();
    let rb: Vec<&Prepared> = b.iter().collect();
    assert_eq!(full.logits(&ra).unwrap(), ablated.logits(&rb).unwrap());

    set(&mut full, "context.s11", &vec![0.3; cfg.window * cfg.d]);
    assert_ne!(full.logits(&ra).unwrap(), ablated.logits(&rb).unwrap());
}

#[test]
fn constant_times_reduce_context_attention_to_vanilla() {
    let cfg = tiny_config();
    let m = model::<f64>(&cfg, AblationFlags::default());
    let mut s = random_stream(&mut rng(8), &cfg, 3, true);
    s.timestamps = Some(vec![1.7e9; 3]);
    let (ctx, t) = run(&m, &prepare_all(&m, &[s]));
    let cls = ctx.graph.value(t.h12_cls).clone();
    let mut plain = Ctx::eval(m.store());
    let x = plain.constant(cls);
    let y = multi_head_attention(&mut plain, x, &[true; 3], &m.context_mha().attention).unwrap();
    assert!(plain.graph.value(y).max_abs_diff(ctx.graph.value(t.h12_cls_prime)) < 1e-12);
}

#[test]
fn gate_limits_and_fixed_point() {
    let cfg = tiny_config();
    let mut m = model::<f64>(&cfg, AblationFlags::default());
    let mut r = rng(9);
    let a = Tensor::from_f64(&[3, 8], &(0..24).map(|_| r.gen_range(-2.0..2.0)).collect::<Vec<_>>()).unwrap();
    let b = Tensor::from_f64(&[3, 8], &(0..24).map(|_| r.gen_range(-2.0..2.0)).collect::<Vec<_>>()).unwrap();
    let fuse = |m: &TempoFormer<f64>, x: &Tensor<f64>, y: &Tensor<f64>| {
        let mut ctx = Ctx::eval(m.store());
        let (xv, yv) = (ctx.constant(x.clone()), ctx.constant(y.clone()));
        let out = m.gate_fuse(&mut ctx, xv, yv).unwrap();
        ctx.graph.value(out).clone()
    };
    let ln = |t: &Tensor<f64>| {
        let rows: Vec<f64> = (0..t.rows()).flat_map(|r| layer_norm(t.row(r))).collect();
        Tensor::from_f64(t.shape(), &rows).unwrap()
    };
    let same = fuse(&m, &a, &a);
    assert!(same.max_abs_diff(&ln(&a)) < 1e-12);

    zero(&mut m, "gate.proj.weight");
    set(&mut m, "gate.proj.bias", &[-20.0; 8]);
    assert!(fuse(&m, &a, &b).max_abs_diff(&ln(&a)) < 1e-6);
    set(&mut m, "gate.proj.bias", &[20.0; 8]);
    assert!(fuse(&m, &a, &b).max_abs_diff(&ln(&b)) < 1e-6);

    let ablated = model::<f64>(
        &cfg,
        AblationFlags {
            no_gate_norm: true,
            ..AblationFlags::default()
        },
    );
    assert_eq!(fuse(&ablated, &a, &b), b);
}

#[test]
fn gate_values_stay_inside_the_unit_interval() {
    let cfg = tiny_config();
    let m = model::<f64>(&cfg, AblationFlags::default());
    let mut r = rng(10);
    for _ in 0..20 {
        let n = r.gen_range(1..=3);
        let s = random_stream(&mut r, &cfg, n, true);
        let (ctx, t) = run(&m, &prepare_all(&m, &[s]));
        let both: Vec<f64> = (0..3)
            .flat_map(|row| {
                let mut v = ctx.graph.value(t.h12_cls).row(row).to_vec();
                v.extend_from_slice(ctx.graph.value(t.h12_cls_prime).row(row));
                v
            })
            .collect();
        let x = Tensor::from_f64(&[3, 16], &both).unwrap();
        let gate = m.gate().unwrap();
        let mut z = x.matmul(m.store().value(gate.proj.w)).unwrap();
        for row in z.data_mut().chunks_mut(8) {
            for (v, b) in row.iter_mut().zip(m.store().value(gate.proj.b.unwrap()).data()) {
                *v += b;
            }
        }
        assert!(z.data().iter().all(|&v| {
            let g = 1.0 / (1.0 + (-v).exp());
            g > 0.0 && g < 1.0
        }));
        assert!(!ctx.graph.value(t.c_global).has_non_finite());
    }
}

#[test]
fn zero_head_predicts_class_zero() {
    let cfg = ModelConfig {
        classes: 3,
        ..tiny_config()
    };
    let mut m = model::<f64>(&cfg, AblationFlags::default());
    for n in ["head.fc1", "head.fc2", "head.out"] {
        zero(&mut m, &format!("{n}.weight"));
        zero(&mut m, &format!("{n}.bias"));
    }
    let s = random_stream(&mut rng(11), &cfg, 2, true);
    let p = prepare_all(&m, &[s]);
    let logits = m.logits(&[&p[0]]).unwrap();
    assert!(logits.data().iter().all(|&v| v == 0.0));
    assert_eq!(m.predict(&[&p[0]]).unwrap(), vec![0]);
}

#[test]
fn one_class_model_has_one_logit() {
    let cfg = ModelConfig {
        classes: 1,
        ..tiny_config()
    };
    let m = model::<f64>(&cfg, AblationFlags::default());
    let mut s = random_stream(&mut rng(12), &cfg, 3, true);
    s.label = 0;
    let p = prepare_all(&m, &[s]);
    assert_eq!(m.logits(&[&p[0]]).unwrap().shape(), &[1, 1]);
    assert_eq!(m.predict(&[&p[0]]).unwrap(), vec![0]);
}

#[test]
fn toy_head_by_hand() {
    let cfg = ModelConfig {
        d: 2,
        heads: 1,
        d_ff: 2,
        head_hidden: 2,
        ..tiny_config()
    };
    let mut m = model::<f64>(&cfg, AblationFlags::default());
    set(&mut m, "head.fc1.weight", &[1.0, -1.0, 0.5, 0.0, 0.0, 2.0, -1.0, 1.0]);
    set(&mut m, "head.fc1.bias", &[0.1, -0.2]);
    set(&mut m, "head.fc2.weight", &[1.0, 2.0, -3.0, 1.0]);
    set(&mut m, "head.fc2.bias", &[0.0, 0.5]);
    set(&mut m, "head.out.weight", &[1.0, 0.0, 1.0, -1.0]);
    set(&mut m, "head.out.bias", &[0.25, 0.0]);
    let mut ctx = Ctx::eval(m.store());
    let x = ctx.constant(Tensor::from_f64(&[1, 4], &[1.0, 2.0, -1.0, 0.5]).unwrap());
    let y = m.classify(&mut ctx, x).unwrap();
    // fc1: [1+1+0-0.5+0.1, -1+0-2+0.5-0.2] = [1.6, -2.7] -> relu [1.6, 0]
    // fc2: [1.6, 3.2+0.5] = [1.6, 3.7]
    // out: [1.6+3.7+0.25, -3.7]
    assert_eq!(ctx.graph.value(y).to_f64_vec().len(), 2);
    let got = ctx.graph.value(y).data().to_vec();
    assert!((got[0] - 5.55).abs() < 1e-12 && (got[1] + 3.7).abs() < 1e-12, "{got:?}");
}

#[test]
fn temporal_rope_flag_equals_positional_mode() {
    let cfg = tiny_config();
    let flagged = model::<f64>(
        &cfg,
        AblationFlags {
            no_temporal_rope: true,
            ..AblationFlags::default()
        },
    );
    let positional = model::<f64>(
        &ModelConfig {
            time_mode: TimeMode::Positional,
            ..cfg.clone()
        },
        AblationFlags::default(),
    );
    let mut r = rng(13);
    let streams: Vec<_> = (1..=3).map(|n| random_stream(&mut r, &cfg, n, true)).collect();
    let a = prepare_all(&flagged, &streams);
    let b = prepare_all(&positional, &streams);
    let ra: Vec<&Prepared> = a.iter().collect();
    let rb: Vec<&Prepared> = b.iter().collect();
    assert_eq!(flagged.logits(&ra).unwrap(), positional.logits(&rb).unwrap());
}

#[test]
fn identity_times_equal_positions() {
    for anchor in [TimeAnchor::First, TimeAnchor::Current] {
        let cfg = ModelConfig {
            time_anchor: anchor,
            time_transform: TimeTransform::Identity,
            ..tiny_config()
        };
        let temporal = model::<f64>(&cfg, AblationFlags::default());
        let positional = model::<f64>(
            &ModelConfig {
                time_mode: TimeMode::Positional,
                ..cfg.clone()
            },
            AblationFlags::default(),
        );
        let mut s = random_stream(&mut rng(14), &cfg, 3, true);
        s.timestamps = Some(vec![0.0, 1.0, 2.0]);
        let a = temporal.prepare(&s).unwrap();
        let b = positional.prepare(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(temporal.logits(&[&a]).unwrap(), positional.logits(&[&b]).unwrap());
    }
}

#[test]
fn parameter_counts_follow_the_ablation_order() {
    let cfg = tiny_config();
    let count = |flags: AblationFlags, variant: Variant| {
        model::<f32>(
            &ModelConfig {
                variant,
                ..cfg.clone()
            },
            flags,
        )
        .param_count()
    };
    let full = count(AblationFlags::default(), Variant::TempoFormer);
    let no_gate = count(
        AblationFlags {
            no_gate_norm: true,
            ..AblationFlags::default()
        },
        Variant::TempoFormer,
    );
    let stripped = count(
        AblationFlags {
            no_gate_norm: true,
            no_stream_embed_s10_s11: true,
            no_stream_embed_s11: true,
            no_rope_mha: true,
            no_temporal_rope: false,
        },
        Variant::TempoFormer,
    );
    let ro = count(AblationFlags::default(), Variant::RoTempoFormer);
    assert!(full > no_gate && no_gate > stripped, "{full} {no_gate} {stripped}");
    assert!(ro > full);
    let d = cfg.d;
    let gate = 2 * d * d + d + 2 * d;
    assert_eq!(full - no_gate, gate);
    assert_eq!(no_gate - stripped, 2 * cfg.window * d);
    let h = cfg.recurrent_width();
    assert_eq!(ro - full, 2 * (d * 4 * h + 4 * h + h * 4 * h));
}

#[test]
fn padding_posts_have_no_influence() {
    let cfg = ModelConfig {
        window: 4,
        ..tiny_config()
    };
    let m = model::<f64>(&cfg, AblationFlags::default());
    let mut r = rng(15);
    for _ in 0..10 {
        let s = random_stream(&mut r, &cfg, 2, true);
        let p = m.prepare(&s).unwrap();
        let mut q = p.clone();
        for t in q.tokens.iter_mut().take(2 * cfg.max_len) {
            *t = r.gen_range(0..cfg.vocab);
        }
        assert_eq!(m.logits(&[&p]).unwrap(), m.logits(&[&q]).unwrap());
        let (ctx, t) = run(&m, &[p]);
        for weights in [t.stream_weights, t.context_weights] {
            let w = ctx.graph.value(weights).data().to_vec();
            for row in w.chunks(cfg.window) {
                assert_eq!(row[0], 0.0);
                assert_eq!(row[1], 0.0);
            }
        }
    }
}

#[test]
fn batching_matches_one_stream_at_a_time() {
    let cfg = tiny_config();
    let m = model::<f64>(&cfg, AblationFlags::default());
    let mut r = rng(16);
    let streams: Vec<_> = (0..5).map(|i| random_stream(&mut r, &cfg, 1 + i % 3, true)).collect();
    let p = prepare_all(&m, &streams);
    let refs: Vec<&Prepared> = p.iter().collect();
    let all = m.logits(&refs).unwrap();
    for (i, q) in p.iter().enumerate() {
        let one = m.logits(&[q]).unwrap();
        for (a, b) in one.data().iter().zip(all.row(i)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn streams_longer_than_the_window_or_empty_are_rejected() {
    let cfg = tiny_config();
    let m = model::<f64>(&cfg, AblationFlags::default());
    let s = random_stream(&mut rng(17), &cfg, 4, true);
    assert!(m.prepare(&s).is_err());
    let mut e = random_stream(&mut rng(17), &cfg, 1, true);
    e.tokens.clear();
    e.masks.clear();
    e.timestamps = Some(vec![]);
    assert!(m.prepare(&e).is_err());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let cfg = tiny_config();
    let m = model::<f64>(&cfg, AblationFlags::default());
    let mut r = rng(18);
    let streams = vec![random_stream(&mut r, &cfg, 3, true), random_stream(&mut r, &cfg, 2, true)];
    let p = prepare_all(&m, &streams);
    let refs: Vec<&Prepared> = p.iter().collect();
    let batch = m.batch(&refs).unwrap();
    let inputs: Vec<Tensor<f64>> = m.store().iter().map(|(_, p)| p.value.clone()).collect();
    let report = grad_check(
        |g, vars| {
            let logits = Ctx::scoped(g, m.store(), Some(vars), |ctx| Ok(m.forward(ctx, &batch)?.logits))?;
            let lp = g.log_softmax_rows(logits)?;
            let picked = g.pick(lp, &batch.labels)?;
            let mean = g.mean(picked);
            Ok(g.scale(mean, -1.0))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn recurrent_variant_handles_single_posts_and_zero_weights() {
    let cfg = ModelConfig {
        variant: Variant::RoTempoFormer,
        window: 1,
        ..tiny_config()
    };
    let mut m = model::<f64>(&cfg, AblationFlags::default());
    let mut r = rng(19);
    let s = random_stream(&mut r, &cfg, 1, true);
    let p = m.prepare(&s).unwrap();
    assert!(!m.logits(&[&p]).unwrap().has_non_finite());

    let names: Vec<String> = m
        .store()
        .iter()
        .map(|(_, p)| p.name.clone())
        .filter(|n| n.starts_with("recurrent.") && n.ends_with(".weight"))
        .collect();
    for n in &names {
        zero(&mut m, n);
    }
    let a = m.logits(&[&p]).unwrap();
    let other = m.prepare(&random_stream(&mut r, &cfg, 1, true)).unwrap();
    assert_eq!(a, m.logits(&[&other]).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny_config();
    let m = model::<f32>(
        &cfg,
        AblationFlags {
            no_stream_embed_s11: true,
            ..AblationFlags::default()
        },
    );
    let vocab = Vocabulary::build(["a b c d e f g h"]);
    let labels = LabelSet::new(vec!["none".into(), "switch".into()]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::from_model(&m, &vocab, &labels, serde_json::json!({"epoch": 1})).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.vocab.id("c"), vocab.id("c"));
    let back: TempoFormer<f32> = loaded.to_model().unwrap();
    for ((_, a), (_, b)) in m.store().iter().zip(back.store().iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    assert_eq!(back.flags(), m.flags());
    assert!(!dir.path().join("model.tmp").exists());
}
