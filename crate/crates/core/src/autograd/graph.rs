use std::collections::HashMap;

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;

/// Node handle on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Gather(ParamId, Vec<usize>),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy(Var, Vec<usize>, Tensor),
    BceWithLogits(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode autodiff tape over a borrowed [`ParamStore`].
///
/// Every operation records its inputs; [`Graph::backward`] walks the tape in
/// reverse and returns gradients for every parameter.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(256), param_vars: HashMap::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.len(), 1);
        t.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input (no gradient is propagated past it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Whole parameter tensor; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    /// Selects rows of a parameter table (embedding lookup).
    pub fn gather(&mut self, id: ParamId, rows: &[usize]) -> Var {
        let table = self.params.get(id);
        let mut out = Tensor::zeros(rows.len(), table.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(r));
        }
        self.push(out, Op::Gather(id, rows.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let out = Tensor::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Add(a, b))
    }

    /// Adds the `1 × m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert!(y.rows == 1 && y.cols == x.cols, "add_row shape mismatch");
        let mut out = x.clone();
        for r in 0..out.rows {
            for (o, v) in out.row_mut(r).iter_mut().zip(&y.data) {
                *o += v;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Mul(a, b))
    }

    /// Multiplies every row of `a` element-wise by the `1 × m` row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert!(y.rows == 1 && y.cols == x.cols, "mul_row shape mismatch");
        let mut out = x.clone();
        for r in 0..out.rows {
            for (o, v) in out.row_mut(r).iter_mut().zip(&y.data) {
                *o *= v;
            }
        }
        self.push(out, Op::MulRow(a, b))
    }

    /// `scale * a + shift`, element-wise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|v| scale * v + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    /// Adds a constant tensor (e.g. an attention mask).
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        let k = self.input(c.clone());
        self.add(a, k)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start <= end && end <= x.cols, "slice_cols out of range");
        let mut out = Tensor::zeros(x.rows, end - start);
        for r in 0..x.rows {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start <= end && end <= x.rows, "slice_rows out of range");
        let out = Tensor::from_vec(end - start, x.cols, x.data[start * x.cols..end * x.cols].to_vec());
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.slice_rows(a, r, r + 1)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows, "concat_cols row mismatch");
                out.row_mut(r)[offset..offset + t.cols].copy_from_slice(t.row(r));
                offset += t.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Per-row standardisation (zero mean, unit variance), no affine part.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        self.push(out, Op::LayerNormRows(a))
    }

    /// Column means, producing a `1 × cols` row. An empty input yields zeros.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(1, x.cols);
        if x.rows > 0 {
            for r in 0..x.rows {
                for (o, v) in out.data.iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            let n = x.rows as f64;
            out.data.iter_mut().for_each(|v| *v /= n);
        }
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Summed softmax cross-entropy of each row of `logits` against its
    /// target column.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows, targets.len(), "cross_entropy target count mismatch");
        let mut probs = x.clone();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = x.row(r);
            let lse = log_sum_exp(row);
            loss += lse - row[t];
            softmax_in_place(probs.row_mut(r));
        }
        self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, targets.to_vec(), probs))
    }

    /// Summed binary cross-entropy with logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.len(), targets.len(), "bce target count mismatch");
        let loss = x.data.iter().zip(targets).map(|(&z, &y)| softplus(z) - y * z).sum();
        self.push(Tensor::scalar(loss), Op::BceWithLogits(logits, targets.to_vec()))
    }

    /// Back-propagates from the scalar `loss`, returning per-parameter
    /// gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward requires a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = self.params.zero_grads();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&g),
                Op::Gather(id, rows) => {
                    let dst = out.get_mut(*id);
                    for (k, &r) in rows.iter().enumerate() {
                        for (d, v) in dst.row_mut(r).iter_mut().zip(g.row(k)) {
                            *d += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ ⇒ da = g b, db = gᵀ a
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut db = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, db);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let da = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect());
                    let db = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect());
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MulRow(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let mut da = g.clone();
                    let mut db = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            da.set(r, c, g.get(r, c) * y.data[c]);
                            db.data[c] += g.get(r, c) * x.get(r, c);
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Affine(a, scale) => acc(&mut grads, *a, g.map(|v| v * scale)),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let da = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&y.data).map(|(d, t)| d * (1.0 - t * t)).collect());
                    acc(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let da = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&y.data).map(|(d, s)| d * s * (1.0 - s)).collect());
                    acc(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let da = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&x.data).map(|(d, &x)| d * gelu_grad(x)).collect(),
                    );
                    acc(&mut grads, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    for r in 0..g.rows {
                        da.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SliceRows(a, start) => {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    da.data[start * x.cols..(start + g.rows) * x.cols].copy_from_slice(&g.data);
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut dp = Tensor::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows;
                        let dp = Tensor::from_vec(rows, g.cols, g.data[offset * g.cols..(offset + rows) * g.cols].to_vec());
                        offset += rows;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (c, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LayerNormRows(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut da = Tensor::zeros(g.rows, g.cols);
                    let n = g.cols as f64;
                    for r in 0..g.rows {
                        let xr = x.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let (yr, gr) = (y.row(r), g.row(r));
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n;
                        for (c, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d = inv * (gr[c] - g_mean - yr[c] * gy_mean);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    if x.rows > 0 {
                        let n = x.rows as f64;
                        for r in 0..x.rows {
                            for (d, v) in da.row_mut(r).iter_mut().zip(&g.data) {
                                *d = v / n;
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    let s = g.data[0];
                    acc(&mut grads, *a, Tensor::from_vec(x.rows, x.cols, vec![s; x.len()]));
                }
                Op::CrossEntropy(a, targets, probs) => {
                    let s = g.data[0];
                    let mut da = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = da.row_mut(r);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::BceWithLogits(a, targets) => {
                    let x = self.value(*a);
                    let s = g.data[0];
                    let data = x.data.iter().zip(targets).map(|(&z, &y)| s * (sigmoid(z) - y)).collect();
                    acc(&mut grads, *a, Tensor::from_vec(x.rows, x.cols, data));
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
