use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{s, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine { x: Var, scale: f64 },
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Powf { x: Var, p: f64 },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<S>,
        inv_std: Vec<S>,
    },
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterRows { base: Var, src: Var, idx: Vec<usize> },
    ConcatCols(Var, Var),
    SliceCols { x: Var, start: usize },
    SplitHeads { x: Var, groups: usize, seq: usize, heads: usize },
    MergeHeads { x: Var, groups: usize, seq: usize, heads: usize },
    Rotary {
        x: Var,
        cos: Vec<S>,
        sin: Vec<S>,
        seq: usize,
        block: usize,
    },
    Reshape(Var),
    Pick { x: Var, idx: Vec<usize> },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    grad: Option<Tensor<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// Rows are grouped into blocks of `block` rows that share one of `tables`
/// phase tables, each of `seq` rows; inside a block the table row cycles.
fn table_row(r: usize, seq: usize, block: usize, tables: usize) -> usize {
    (r / block % tables) * seq + r % seq
}

/// Topologically ordered record of executed operations.
///
/// Nodes are appended in execution order and only ever reference earlier
/// nodes, so the record is acyclic by construction and a reverse sweep visits
/// every node after all of its consumers.
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

fn shape_err<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = C * (x + A * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf; `None` when backward never reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a leaf, or zeros of the leaf's shape.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<S> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ----- linear algebra -------------------------------------------------

    /// `a[..×k] · b[k×n]`; leading dimensions of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rank() != 2 || av.last_dim() != bv.shape()[0] || av.rank() < 2 {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.last_dim(), bv.shape()[1]);
        let mut out = vec![S::zero(); m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product over the leading axis: `a[G×m×k] · b[G×k×n]`, or
    /// `a · bᵀ` per batch when `trans_b` (with `b[G×n×k]`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 3 || bv.rank() != 3 || av.shape()[0] != bv.shape()[0] {
            return Err(shape_err("batch_matmul", av, bv));
        }
        let (g, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (bk, n) = if trans_b {
            (bv.shape()[2], bv.shape()[1])
        } else {
            (bv.shape()[1], bv.shape()[2])
        };
        if bk != k {
            return Err(shape_err("batch_matmul", av, bv));
        }
        let mut out = vec![S::zero(); g * m * n];
        for gi in 0..g {
            let a_blk = &av.data()[gi * m * k..(gi + 1) * m * k];
            let b_blk = &bv.data()[gi * k * n..(gi + 1) * k * n];
            let o_blk = &mut out[gi * m * n..(gi + 1) * m * n];
            if trans_b {
                gemm_nt(a_blk, b_blk, o_blk, m, k, n);
            } else {
                gemm_nn(a_blk, b_blk, o_blk, m, k, n);
            }
        }
        let value = Tensor::new(&[g, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    // ----- elementwise ------------------------------------------------------

    fn zip_values(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_values("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_values("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_values("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a row vector `b[C]` to every trailing row of `x[..×C]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.last_dim() {
            return Err(shape_err("add_row", xv, bv));
        }
        let c = xv.last_dim();
        let mut data = xv.data().to_vec();
        for (i, d) in data.iter_mut().enumerate() {
            *d = *d + bv.data()[i % c];
        }
        let v = Tensor::new(xv.shape(), data)?;
        Ok(self.push(v, Op::AddRow(x, b), &[x, b]))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (sc, sh) = (s::<S>(scale), s::<S>(shift));
        let v = self.value(x).map(|e| sc * e + sh);
        self.push(v, Op::Affine { x, scale }, &[x])
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(S::zero()));
        self.push(v, Op::Relu(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| S::cast_from(gelu_parts(e.as_f64()).0));
        self.push(v, Op::Gelu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.tanh());
        self.push(v, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| {
            if e >= S::zero() {
                S::one() / (S::one() + (-e).exp())
            } else {
                let z = e.exp();
                z / (S::one() + z)
            }
        });
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.exp());
        self.push(v, Op::Exp(x), &[x])
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let pe = s::<S>(p);
        let v = self.value(x).map(|e| e.powf(pe));
        self.push(v, Op::Powf { x, p }, &[x])
    }

    // ----- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / s::<S>(xv.len() as f64));
        self.push(v, Op::Mean(x), &[x])
    }

    // ----- row-wise normalizations ------------------------------------------

    /// Softmax over the trailing axis with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                total = total + *e;
            }
            for e in row.iter_mut() {
                *e = *e / total;
            }
        }
        let v = Tensor::new(xv.shape(), data)?;
        Ok(self.push(v, Op::SoftmaxRows(x), &[x]))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = row.iter().map(|&e| (e - max).exp()).sum::<S>().ln() + max;
            for e in row.iter_mut() {
                *e = *e - lse;
            }
        }
        let v = Tensor::new(xv.shape(), data)?;
        Ok(self.push(v, Op::LogSoftmaxRows(x), &[x]))
    }

    /// Per-row normalization to zero mean and unit variance followed by the
    /// affine map `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.last_dim();
        if gv.len() != d {
            return Err(shape_err("layer_norm", xv, gv));
        }
        if bv.len() != d {
            return Err(shape_err("layer_norm", xv, bv));
        }
        let rows = xv.rows();
        let dn = s::<S>(d as f64);
        let eps = s::<S>(eps);
        let mut normed = vec![S::zero(); xv.len()];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<S>() / dn;
            let inv = S::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let nh = (row[j] - mean) * inv;
                normed[r * d + j] = nh;
                out[r * d + j] = nh * gv.data()[j] + bv.data()[j];
            }
        }
        let v = Tensor::new(xv.shape(), out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    // ----- indexing and layout ----------------------------------------------

    /// Selects trailing rows of `x` by index. Repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.last_dim());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= rows {
                return Err(Error::IndexOutOfRange {
                    what: "gather_rows",
                    index: i,
                    size: rows,
                });
            }
            data.extend_from_slice(xv.row(i));
        }
        let v = Tensor::new(&[idx.len(), c], data)?;
        Ok(self.push(
            v,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Copy of `base` whose rows `idx[i]` are replaced by row `i` of `src`.
    /// All other rows are copied through untouched.
    pub fn scatter_rows(&mut self, base: Var, idx: &[usize], src: Var) -> Result<Var> {
        let (bv, sv) = (self.value(base), self.value(src));
        let c = bv.last_dim();
        if sv.last_dim() != c || sv.rows() != idx.len() {
            return Err(shape_err("scatter_rows", bv, sv));
        }
        let rows = bv.rows();
        let mut data = bv.data().to_vec();
        for (i, &r) in idx.iter().enumerate() {
            if r >= rows {
                return Err(Error::IndexOutOfRange {
                    what: "scatter_rows",
                    index: r,
                    size: rows,
                });
            }
            data[r * c..(r + 1) * c].copy_from_slice(sv.row(i));
        }
        let v = Tensor::new(bv.shape(), data)?;
        Ok(self.push(
            v,
            Op::ScatterRows {
                base,
                src,
                idx: idx.to_vec(),
            },
            &[base, src],
        ))
    }

    /// `[a | b]` along the trailing axis for two row-aligned matrices.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av, bv));
        }
        let (ca, cb) = (av.last_dim(), bv.last_dim());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let v = Tensor::new(&[av.rows(), ca + cb], data)?;
        Ok(self.push(v, Op::ConcatCols(a, b), &[a, b]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if len == 0 || start + len > c {
            return Err(Error::InvalidShape {
                op: "slice_cols",
                detail: format!("columns {start}..{} of {c}", start + len),
            });
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let v = Tensor::new(&[xv.rows(), len], data)?;
        Ok(self.push(v, Op::SliceCols { x, start }, &[x]))
    }

    /// `[groups·seq × heads·dh]` → `[groups·heads × seq × dh]`.
    pub fn split_heads(&mut self, x: Var, groups: usize, seq: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.rows() != groups * seq || heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::InvalidShape {
                op: "split_heads",
                detail: format!("{:?} into {groups}×{seq} rows, {heads} heads", xv.shape()),
            });
        }
        let dh = d / heads;
        let mut data = vec![S::zero(); xv.len()];
        for g in 0..groups {
            for t in 0..seq {
                let src = xv.row(g * seq + t);
                for h in 0..heads {
                    let dst = ((g * heads + h) * seq + t) * dh;
                    data[dst..dst + dh].copy_from_slice(&src[h * dh..(h + 1) * dh]);
                }
            }
        }
        let v = Tensor::new(&[groups * heads, seq, dh], data)?;
        Ok(self.push(
            v,
            Op::SplitHeads {
                x,
                groups,
                seq,
                heads,
            },
            &[x],
        ))
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: Var, groups: usize, seq: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 || xv.shape()[0] != groups * heads || xv.shape()[1] != seq {
            return Err(Error::InvalidShape {
                op: "merge_heads",
                detail: format!("{:?} from {groups} groups, {heads} heads, seq {seq}", xv.shape()),
            });
        }
        let dh = xv.shape()[2];
        let d = dh * heads;
        let mut data = vec![S::zero(); xv.len()];
        for g in 0..groups {
            for h in 0..heads {
                for t in 0..seq {
                    let src = ((g * heads + h) * seq + t) * dh;
                    let dst = (g * seq + t) * d + h * dh;
                    data[dst..dst + dh].copy_from_slice(&xv.data()[src..src + dh]);
                }
            }
        }
        let v = Tensor::new(&[groups * seq, d], data)?;
        Ok(self.push(
            v,
            Op::MergeHeads {
                x,
                groups,
                seq,
                heads,
            },
            &[x],
        ))
    }

    /// Rotates coordinate pairs `(2i, 2i+1)` of every trailing row. `cos`/`sin`
    /// stack one or more `[seq × dh/2]` tables; row `r` uses row `r % seq` of
    /// table `(r / block) % tables`.
    pub fn rotary(
        &mut self,
        x: Var,
        cos: Vec<S>,
        sin: Vec<S>,
        seq: usize,
        block: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let dh = xv.last_dim();
        let per_table = seq * dh / 2;
        if !dh.is_multiple_of(2)
            || per_table == 0
            || !cos.len().is_multiple_of(per_table)
            || cos.is_empty()
            || sin.len() != cos.len()
            || block == 0
        {
            return Err(Error::InvalidShape {
                op: "rotary",
                detail: format!("rows of width {dh} with {} angles over seq {seq}", cos.len()),
            });
        }
        if !xv.rows().is_multiple_of(seq) {
            return Err(Error::InvalidShape {
                op: "rotary",
                detail: format!("{} rows not a multiple of seq {seq}", xv.rows()),
            });
        }
        let half = dh / 2;
        let tables = cos.len() / per_table;
        let mut data = xv.data().to_vec();
        for (r, row) in data.chunks_mut(dh).enumerate() {
            let t = table_row(r, seq, block, tables);
            for i in 0..half {
                let (c, sn) = (cos[t * half + i], sin[t * half + i]);
                let (x0, x1) = (row[2 * i], row[2 * i + 1]);
                row[2 * i] = x0 * c - x1 * sn;
                row[2 * i + 1] = x0 * sn + x1 * c;
            }
        }
        let v = Tensor::new(xv.shape(), data)?;
        Ok(self.push(v, Op::Rotary { x, cos, sin, seq, block }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// `out[b] = x[b, idx[b]]` for a matrix `x[B×C]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if xv.rows() != idx.len() {
            return Err(Error::InvalidShape {
                op: "pick",
                detail: format!("{} rows, {} indices", xv.rows(), idx.len()),
            });
        }
        let mut data = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            if i >= c {
                return Err(Error::IndexOutOfRange {
                    what: "pick",
                    index: i,
                    size: c,
                });
            }
            data.push(xv.row(r)[i]);
        }
        let v = Tensor::new(&[idx.len()], data)?;
        Ok(self.push(
            v,
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    // ----- reverse sweep ----------------------------------------------------

    /// Back-propagates from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarSeed(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.nodes[i].grad {
                    Some(g) => g.add_assign(&gout),
                    slot @ None => *slot = Some(gout),
                }
                continue;
            }
            self.propagate(i, &gout, &mut grads);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], v: Var, f: impl FnOnce(&mut [S])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        let g = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(g.data_mut());
    }

    fn propagate(&self, i: usize, gout: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[i];
        let go = gout.data();
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let elementwise = |grads: &mut [Option<Tensor<S>>], x: Var, f: &dyn Fn(usize) -> S| {
            self.accumulate(grads, x, |g| {
                for (j, e) in g.iter_mut().enumerate() {
                    *e = *e + f(j);
                }
            })
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.last_dim(), bv.shape()[1]);
                self.accumulate(grads, *a, |g| gemm_nt(go, bv.data(), g, m, n, k));
                self.accumulate(grads, *b, |g| gemm_tn(av.data(), go, g, m, k, n));
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (g_n, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = node.value.shape()[2];
                self.accumulate(grads, *a, |g| {
                    for gi in 0..g_n {
                        let go_b = &go[gi * m * n..(gi + 1) * m * n];
                        let b_b = &bv.data()[gi * k * n..(gi + 1) * k * n];
                        let g_b = &mut g[gi * m * k..(gi + 1) * m * k];
                        if *trans_b {
                            gemm_nn(go_b, b_b, g_b, m, n, k);
                        } else {
                            gemm_nt(go_b, b_b, g_b, m, n, k);
                        }
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for gi in 0..g_n {
                        let go_b = &go[gi * m * n..(gi + 1) * m * n];
                        let a_b = &av.data()[gi * m * k..(gi + 1) * m * k];
                        let g_b = &mut g[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            gemm_tn(go_b, a_b, g_b, m, n, k);
                        } else {
                            gemm_tn(a_b, go_b, g_b, m, k, n);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                elementwise(grads, *a, &|j| go[j]);
                elementwise(grads, *b, &|j| go[j]);
            }
            Op::Sub(a, b) => {
                elementwise(grads, *a, &|j| go[j]);
                elementwise(grads, *b, &|j| -go[j]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                elementwise(grads, *a, &|j| go[j] * bv[j]);
                elementwise(grads, *b, &|j| go[j] * av[j]);
            }
            Op::AddRow(x, b) => {
                elementwise(grads, *x, &|j| go[j]);
                let c = self.nodes[b.0].value.len();
                self.accumulate(grads, *b, |g| {
                    for (j, &e) in go.iter().enumerate() {
                        g[j % c] = g[j % c] + e;
                    }
                });
            }
            Op::Affine { x, scale } => {
                let sc = s::<S>(*scale);
                elementwise(grads, *x, &|j| go[j] * sc);
            }
            Op::Sum(x) => {
                let g0 = go[0];
                elementwise(grads, *x, &|_| g0);
            }
            Op::Mean(x) => {
                let g0 = go[0] / s::<S>(self.nodes[x.0].value.len() as f64);
                elementwise(grads, *x, &|_| g0);
            }
            Op::Relu(x) => {
                let xv = val(*x);
                elementwise(grads, *x, &|j| {
                    if xv[j] > S::zero() {
                        go[j]
                    } else {
                        S::zero()
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                elementwise(grads, *x, &|j| {
                    go[j] * S::cast_from(gelu_parts(xv[j].as_f64()).1)
                });
            }
            Op::Tanh(x) => {
                elementwise(grads, *x, &|j| go[j] * (S::one() - out[j] * out[j]));
            }
            Op::Sigmoid(x) => {
                elementwise(grads, *x, &|j| go[j] * out[j] * (S::one() - out[j]));
            }
            Op::Exp(x) => {
                elementwise(grads, *x, &|j| go[j] * out[j]);
            }
            Op::Powf { x, p } => {
                let xv = val(*x);
                let pe = s::<S>(*p);
                let pm1 = s::<S>(*p - 1.0);
                elementwise(grads, *x, &|j| {
                    if *p == 0.0 {
                        S::zero()
                    } else {
                        go[j] * pe * xv[j].powf(pm1)
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let c = node.value.last_dim();
                self.accumulate(grads, *x, |g| {
                    for r in 0..node.value.rows() {
                        let (y, dy) = (&out[r * c..(r + 1) * c], &go[r * c..(r + 1) * c]);
                        let dot: S = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            g[r * c + j] = g[r * c + j] + y[j] * (dy[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(x) => {
                let c = node.value.last_dim();
                self.accumulate(grads, *x, |g| {
                    for r in 0..node.value.rows() {
                        let (y, dy) = (&out[r * c..(r + 1) * c], &go[r * c..(r + 1) * c]);
                        let total: S = dy.iter().copied().sum();
                        for j in 0..c {
                            g[r * c + j] = g[r * c + j] + dy[j] - y[j].exp() * total;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let rows = node.value.rows();
                let gv = val(*gain);
                let dn = s::<S>(d as f64);
                self.accumulate(grads, *x, |g| {
                    for r in 0..rows {
                        let base = r * d;
                        let mut mean_dx = S::zero();
                        let mut mean_dx_n = S::zero();
                        for j in 0..d {
                            let dxh = go[base + j] * gv[j];
                            mean_dx = mean_dx + dxh;
                            mean_dx_n = mean_dx_n + dxh * normed[base + j];
                        }
                        mean_dx = mean_dx / dn;
                        mean_dx_n = mean_dx_n / dn;
                        for j in 0..d {
                            let dxh = go[base + j] * gv[j];
                            g[base + j] = g[base + j]
                                + inv_std[r] * (dxh - mean_dx - normed[base + j] * mean_dx_n);
                        }
                    }
                });
                self.accumulate(grads, *gain, |g| {
                    for (j, (&dy, &nh)) in go.iter().zip(normed).enumerate() {
                        g[j % d] = g[j % d] + dy * nh;
                    }
                });
                self.accumulate(grads, *bias, |g| {
                    for (j, &dy) in go.iter().enumerate() {
                        g[j % d] = g[j % d] + dy;
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let c = node.value.last_dim();
                self.accumulate(grads, *x, |g| {
                    for (i, &r) in idx.iter().enumerate() {
                        for j in 0..c {
                            g[r * c + j] = g[r * c + j] + go[i * c + j];
                        }
                    }
                });
            }
            Op::ScatterRows { base, src, idx } => {
                let c = node.value.last_dim();
                self.accumulate(grads, *base, |g| {
                    let mut replaced = vec![false; node.value.rows()];
                    for &r in idx {
                        replaced[r] = true;
                    }
                    for (r, &skip) in replaced.iter().enumerate() {
                        if !skip {
                            for j in r * c..(r + 1) * c {
                                g[j] = g[j] + go[j];
                            }
                        }
                    }
                });
                self.accumulate(grads, *src, |g| {
                    for (i, &r) in idx.iter().enumerate() {
                        for j in 0..c {
                            g[i * c + j] = g[i * c + j] + go[r * c + j];
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a.0].value.last_dim();
                let cb = self.nodes[b.0].value.last_dim();
                let c = ca + cb;
                self.accumulate(grads, *a, |g| {
                    for (r, gr) in g.chunks_mut(ca).enumerate() {
                        for j in 0..ca {
                            gr[j] = gr[j] + go[r * c + j];
                        }
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for (r, gr) in g.chunks_mut(cb).enumerate() {
                        for j in 0..cb {
                            gr[j] = gr[j] + go[r * c + ca + j];
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let c = self.nodes[x.0].value.last_dim();
                let len = node.value.last_dim();
                self.accumulate(grads, *x, |g| {
                    for r in 0..node.value.rows() {
                        for j in 0..len {
                            g[r * c + start + j] = g[r * c + start + j] + go[r * len + j];
                        }
                    }
                });
            }
            Op::SplitHeads {
                x,
                groups,
                seq,
                heads,
            } => {
                let dh = node.value.shape()[2];
                let d = dh * heads;
                self.accumulate(grads, *x, |g| {
                    for gi in 0..*groups {
                        for t in 0..*seq {
                            for h in 0..*heads {
                                let src = ((gi * heads + h) * seq + t) * dh;
                                let dst = (gi * seq + t) * d + h * dh;
                                for j in 0..dh {
                                    g[dst + j] = g[dst + j] + go[src + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::MergeHeads {
                x,
                groups,
                seq,
                heads,
            } => {
                let d = node.value.last_dim();
                let dh = d / heads;
                self.accumulate(grads, *x, |g| {
                    for gi in 0..*groups {
                        for h in 0..*heads {
                            for t in 0..*seq {
                                let dst = ((gi * heads + h) * seq + t) * dh;
                                let src = (gi * seq + t) * d + h * dh;
                                for j in 0..dh {
                                    g[dst + j] = g[dst + j] + go[src + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Rotary {
                x,
                cos,
                sin,
                seq,
                block,
            } => {
                let dh = node.value.last_dim();
                let half = dh / 2;
                let tables = cos.len() / (seq * half);
                self.accumulate(grads, *x, |g| {
                    for (r, gr) in g.chunks_mut(dh).enumerate() {
                        let t = table_row(r, *seq, *block, tables);
                        let dy = &go[r * dh..(r + 1) * dh];
                        for i in 0..half {
                            let (c, sn) = (cos[t * half + i], sin[t * half + i]);
                            let (d0, d1) = (dy[2 * i], dy[2 * i + 1]);
                            gr[2 * i] = gr[2 * i] + d0 * c + d1 * sn;
                            gr[2 * i + 1] = gr[2 * i + 1] - d0 * sn + d1 * c;
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                elementwise(grads, *x, &|j| go[j]);
            }
            Op::Pick { x, idx } => {
                let c = self.nodes[x.0].value.last_dim();
                self.accumulate(grads, *x, |g| {
                    for (r, &i) in idx.iter().enumerate() {
                        g[r * c + i] = g[r * c + i] + go[r];
                    }
                });
            }
        }
    }
}
