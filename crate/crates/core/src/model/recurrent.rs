use crate::error::{Error, Result};
use crate::nn::{Ctx, Init, Linear, ParamStore};
use crate::tensor::{Scalar, Tensor, Var};

/// One LSTM direction: `gates = x·W_in + h·W_rec + b`, split `[i, f, g, o]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub input: Linear,
    pub recurrent: Linear,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        Self {
            input: Linear::new(store, init, &format!("{name}.input"), input, 4 * hidden),
            recurrent: Linear::without_bias(store, init, &format!("{name}.recurrent"), hidden, 4 * hidden),
            hidden,
        }
    }

    fn step<S: Scalar>(&self, ctx: &mut Ctx<S>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let a = self.input.forward(ctx, x)?;
        let b = self.recurrent.forward(ctx, h)?;
        let gates = ctx.graph.add(a, b)?;
        let n = self.hidden;
        let i = ctx.graph.slice_cols(gates, 0, n)?;
        let f = ctx.graph.slice_cols(gates, n, n)?;
        let g = ctx.graph.slice_cols(gates, 2 * n, n)?;
        let o = ctx.graph.slice_cols(gates, 3 * n, n)?;
        let i = ctx.graph.sigmoid(i);
        let f = ctx.graph.sigmoid(f);
        let g = ctx.graph.tanh(g);
        let o = ctx.graph.sigmoid(o);
        let keep = ctx.graph.mul(f, c)?;
        let write = ctx.graph.mul(i, g)?;
        let c = ctx.graph.add(keep, write)?;
        let tc = ctx.graph.tanh(c);
        let h = ctx.graph.mul(o, tc)?;
        Ok((h, c))
    }

    pub fn param_count<S: Scalar>(&self, store: &ParamStore<S>) -> usize {
        self.input.param_count(store) + self.recurrent.param_count(store)
    }
}

/// `m⊙new + (1−m)⊙old` for a 0/1 mask `m`.
fn blend<S: Scalar>(ctx: &mut Ctx<S>, m: Var, new: Var, old: Var) -> Result<Var> {
    let a = ctx.graph.mul(m, new)?;
    let inv = ctx.graph.affine(m, -1.0, 1.0);
    let b = ctx.graph.mul(inv, old)?;
    ctx.graph.add(a, b)
}

/// Single bidirectional LSTM layer returning `[h_forward_last ; h_backward_first]`.
#[derive(Clone, Copy, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        Self {
            forward: LstmCell::new(store, init, &format!("{name}.forward"), input, hidden),
            backward: LstmCell::new(store, init, &format!("{name}.backward"), input, hidden),
        }
    }

    /// Runs both directions over `groups` sequences of `len` rows stacked as
    /// `seq: [groups·len × input]`. Steps whose `mask` entry is false leave
    /// that sequence's state untouched. Returns `[groups × 2·hidden]`.
    pub fn encode<S: Scalar>(
        &self,
        ctx: &mut Ctx<S>,
        seq: Var,
        groups: usize,
        len: usize,
        mask: &[bool],
    ) -> Result<Var> {
        if mask.len() != groups * len || ctx.graph.value(seq).rows() != groups * len {
            return Err(Error::InvalidShape {
                op: "bilstm",
                detail: format!(
                    "{} rows and {} mask entries for {groups}×{len}",
                    ctx.graph.value(seq).rows(),
                    mask.len()
                ),
            });
        }
        let n = self.forward.hidden;
        let mut steps = Vec::with_capacity(len);
        for t in 0..len {
            let rows: Vec<usize> = (0..groups).map(|g| g * len + t).collect();
            let x = ctx.graph.gather_rows(seq, &rows)?;
            let keep: Vec<S> = rows
                .iter()
                .flat_map(|&r| std::iter::repeat_n(if mask[r] { S::one() } else { S::zero() }, n))
                .collect();
            let all = keep.iter().all(|&k| k == S::one());
            let m = ctx.constant(Tensor::new(&[groups, n], keep)?);
            steps.push((x, m, all));
        }
        let h_fwd = self.run(ctx, &self.forward, steps.iter().copied(), groups)?;
        let h_bwd = self.run(ctx, &self.backward, steps.iter().rev().copied(), groups)?;
        ctx.graph.concat_cols(h_fwd, h_bwd)
    }

    fn run<S: Scalar>(
        &self,
        ctx: &mut Ctx<S>,
        cell: &LstmCell,
        steps: impl Iterator<Item = (Var, Var, bool)>,
        groups: usize,
    ) -> Result<Var> {
        let zeros = Tensor::zeros(&[groups, cell.hidden]);
        let mut h = ctx.constant(zeros.clone());
        let mut c = ctx.constant(zeros);
        for (x, m, all) in steps {
            let (h_new, c_new) = cell.step(ctx, x, h, c)?;
            if all {
                (h, c) = (h_new, c_new);
            } else {
                h = blend(ctx, m, h_new, h)?;
                c = blend(ctx, m, c_new, c)?;
            }
        }
        Ok(h)
    }

    pub fn param_count<S: Scalar>(&self, store: &ParamStore<S>) -> usize {
        self.forward.param_count(store) + self.backward.param_count(store)
    }
}
