//! Finite-difference checks of every differentiable graph operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, GradCheckReport, Graph, Tensor, Var};
use crate::error::Result;

type Case = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Contracts `out` with fixed random weights so every output coordinate
/// carries a distinct gradient.
fn contract(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = g.constant(Tensor::new(&shape, w)?);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Values bounded away from zero, for operations with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// One named report per operation, in a fixed order.
pub fn op_gradient_suite(seed: u64, eps: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(&'static str, Case, Vec<Tensor<f64>>)> = Vec::new();
    let mut add = |name: &'static str, inputs: Vec<Tensor<f64>>, f: Case| cases.push((name, f, inputs));

    add(
        "matmul",
        vec![random(&mut rng, &[3, 4], -1.0, 1.0), random(&mut rng, &[4, 2], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            contract(g, y, 1)
        }),
    );
    add(
        "batch_matmul",
        vec![random(&mut rng, &[2, 3, 4], -1.0, 1.0), random(&mut rng, &[2, 4, 2], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.batch_matmul(v[0], v[1], false)?;
            contract(g, y, 2)
        }),
    );
    add(
        "batch_matmul_transposed",
        vec![random(&mut rng, &[2, 3, 4], -1.0, 1.0), random(&mut rng, &[2, 5, 4], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.batch_matmul(v[0], v[1], true)?;
            contract(g, y, 3)
        }),
    );
    let pair = |rng: &mut ChaCha8Rng| vec![random(rng, &[3, 4], -1.0, 1.0), random(rng, &[3, 4], -1.0, 1.0)];
    add(
        "add",
        pair(&mut rng),
        Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            contract(g, y, 4)
        }),
    );
    add(
        "sub",
        pair(&mut rng),
        Box::new(|g, v| {
            let y = g.sub(v[0], v[1])?;
            contract(g, y, 5)
        }),
    );
    add(
        "mul",
        pair(&mut rng),
        Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            contract(g, y, 6)
        }),
    );
    add(
        "add_row",
        vec![random(&mut rng, &[3, 4], -1.0, 1.0), random(&mut rng, &[4], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.add_row(v[0], v[1])?;
            contract(g, y, 7)
        }),
    );
    let single = |rng: &mut ChaCha8Rng| vec![random(rng, &[3, 4], -2.0, 2.0)];
    add(
        "affine",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.affine(v[0], -1.7, 0.4);
            contract(g, y, 8)
        }),
    );
    add(
        "scale",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.scale(v[0], 2.5);
            contract(g, y, 9)
        }),
    );
    add(
        "relu",
        vec![off_zero(&mut rng, &[3, 4])],
        Box::new(|g, v| {
            let y = g.relu(v[0]);
            contract(g, y, 10)
        }),
    );
    add(
        "gelu",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.gelu(v[0]);
            contract(g, y, 11)
        }),
    );
    add(
        "tanh",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.tanh(v[0]);
            contract(g, y, 12)
        }),
    );
    add(
        "sigmoid",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.sigmoid(v[0]);
            contract(g, y, 13)
        }),
    );
    add(
        "exp",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.exp(v[0]);
            contract(g, y, 14)
        }),
    );
    add(
        "powf",
        vec![random(&mut rng, &[3, 4], 0.2, 1.5)],
        Box::new(|g, v| {
            let y = g.powf(v[0], 2.3);
            contract(g, y, 15)
        }),
    );
    add("sum", single(&mut rng), Box::new(|g, v| Ok(g.sum(v[0]))));
    add("mean", single(&mut rng), Box::new(|g, v| Ok(g.mean(v[0]))));
    add(
        "softmax_rows",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.softmax_rows(v[0])?;
            contract(g, y, 16)
        }),
    );
    add(
        "log_softmax_rows",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.log_softmax_rows(v[0])?;
            contract(g, y, 17)
        }),
    );
    add(
        "layer_norm",
        vec![
            random(&mut rng, &[3, 4], -2.0, 2.0),
            random(&mut rng, &[4], 0.5, 1.5),
            random(&mut rng, &[4], -0.5, 0.5),
        ],
        Box::new(|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-12)?;
            contract(g, y, 18)
        }),
    );
    add(
        "gather_rows",
        vec![random(&mut rng, &[4, 3], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.gather_rows(v[0], &[2, 0, 2])?;
            contract(g, y, 19)
        }),
    );
    add(
        "scatter_rows",
        vec![random(&mut rng, &[4, 3], -1.0, 1.0), random(&mut rng, &[2, 3], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.scatter_rows(v[0], &[3, 1], v[1])?;
            contract(g, y, 20)
        }),
    );
    add(
        "concat_cols",
        vec![random(&mut rng, &[3, 2], -1.0, 1.0), random(&mut rng, &[3, 4], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.concat_cols(v[0], v[1])?;
            contract(g, y, 21)
        }),
    );
    add(
        "slice_cols",
        vec![random(&mut rng, &[3, 5], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.slice_cols(v[0], 1, 3)?;
            contract(g, y, 22)
        }),
    );
    add(
        "split_heads",
        vec![random(&mut rng, &[6, 4], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.split_heads(v[0], 2, 3, 2)?;
            contract(g, y, 23)
        }),
    );
    add(
        "merge_heads",
        vec![random(&mut rng, &[4, 3, 2], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.merge_heads(v[0], 2, 3, 2)?;
            contract(g, y, 24)
        }),
    );
    let angles: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
    add(
        "rotary",
        vec![random(&mut rng, &[6, 4], -1.0, 1.0)],
        Box::new(move |g, v| {
            let cos = angles.iter().map(|a| a.cos()).collect();
            let sin = angles.iter().map(|a| a.sin()).collect();
            let y = g.rotary(v[0], cos, sin, 3, 3)?;
            contract(g, y, 25)
        }),
    );
    add(
        "reshape",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.reshape(v[0], &[2, 6])?;
            contract(g, y, 26)
        }),
    );
    add(
        "pick",
        single(&mut rng),
        Box::new(|g, v| {
            let y = g.pick(v[0], &[3, 0, 1])?;
            contract(g, y, 27)
        }),
    );

    cases
        .into_iter()
        .map(|(name, f, inputs)| Ok((name, grad_check(|g, v| f(g, v), &inputs, eps)?)))
        .collect()
}
