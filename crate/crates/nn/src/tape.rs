//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation in creation order, which is also a
//! valid topological order, so the backward pass is a single reverse sweep.

use std::collections::HashMap;

use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::{gemm_acc, matmul, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), false, self.value(b), false);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), false, self.value(b), true);
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add: shape mismatch");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((1, out.cols), r.shape(), "add_row: shape mismatch");
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(k);
        self.push(out, Op::Scale(a, k))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x
            .data
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
            .collect();
        let out = Tensor::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` of shape `1 x cols`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std.push(istd);
            for j in 0..cols {
                let h = (row[j] - mean) * istd;
                xhat.data[i * cols + j] = h;
                out.data[i * cols + j] = h * g.data[j] + b.data[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked for `j > i`.
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let limit = if causal { (i + 1).min(cols) } else { cols };
            let row = &xv.row(i)[..limit];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out.data[i * cols + j] = e;
                z += e;
            }
            for j in 0..limit {
                out.data[i * cols + j] /= z;
            }
        }
        self.push(out, Op::Softmax(x))
    }

    /// Gathers rows of `table` by index.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < t.rows, "embedding index {id} out of range {}", t.rows);
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows: column mismatch");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols: row mismatch");
            for i in 0..rows {
                out.row_mut(i)[offset..offset + t.cols].copy_from_slice(t.row(i));
            }
            offset += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        assert!(start + len <= t.cols, "slice_cols out of range");
        let mut out = Tensor::zeros(t.rows, len);
        for i in 0..t.rows {
            out.row_mut(i).copy_from_slice(&t.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    /// Mean token cross-entropy of `logits` (`L x V`) against `targets` (length `L`).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "one target per logit row");
        let mut probs = Tensor::zeros(lv.rows, lv.cols);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[t];
            for (j, v) in row.iter().enumerate() {
                probs.data[i * lv.cols + j] = (v - lse).exp();
            }
        }
        let n = targets.len().max(1) as f64;
        self.push(
            Tensor::scalar(total / n),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Backpropagates from the scalar `loss`, accumulating parameter
    /// gradients into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => grads.grads[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    if needs(&self.nodes, *a) {
                        let bv = self.value(*b);
                        let slot = acc_slot(&mut adj, *a, self.value(*a));
                        gemm_acc(1.0, &g, false, bv, true, slot);
                    }
                    if needs(&self.nodes, *b) {
                        let av = self.value(*a);
                        let slot = acc_slot(&mut adj, *b, self.value(*b));
                        gemm_acc(1.0, av, true, &g, false, slot);
                    }
                }
                Op::MatMulT(a, b) => {
                    // y = a b^T: da = g b, db = g^T a
                    if needs(&self.nodes, *a) {
                        let bv = self.value(*b);
                        let slot = acc_slot(&mut adj, *a, self.value(*a));
                        gemm_acc(1.0, &g, false, bv, false, slot);
                    }
                    if needs(&self.nodes, *b) {
                        let av = self.value(*a);
                        let slot = acc_slot(&mut adj, *b, self.value(*b));
                        gemm_acc(1.0, &g, true, av, false, slot);
                    }
                }
                Op::Add(a, b) => {
                    acc_slot(&mut adj, *a, self.value(*a)).add_assign(&g);
                    acc_slot(&mut adj, *b, self.value(*b)).add_assign(&g);
                }
                Op::AddRow(a, row) => {
                    acc_slot(&mut adj, *a, self.value(*a)).add_assign(&g);
                    let slot = acc_slot(&mut adj, *row, self.value(*row));
                    for i in 0..g.rows {
                        for (s, v) in slot.data.iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                }
                Op::Scale(a, k) => {
                    let slot = acc_slot(&mut adj, *a, self.value(*a));
                    for (s, v) in slot.data.iter_mut().zip(&g.data) {
                        *s += k * v;
                    }
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let slot = acc_slot(&mut adj, *a, x);
                    for ((s, &v), gv) in slot.data.iter_mut().zip(&x.data).zip(&g.data) {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let th = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        let d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                        *s += gv * d;
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = xhat.shape();
                    let gam = self.value(*gamma).data.clone();
                    {
                        let sg = acc_slot(&mut adj, *gamma, self.value(*gamma));
                        for i in 0..rows {
                            for j in 0..cols {
                                sg.data[j] += g.at(i, j) * xhat.at(i, j);
                            }
                        }
                    }
                    {
                        let sb = acc_slot(&mut adj, *beta, self.value(*beta));
                        for i in 0..rows {
                            for j in 0..cols {
                                sb.data[j] += g.at(i, j);
                            }
                        }
                    }
                    let sx = acc_slot(&mut adj, *x, self.value(*x));
                    let n = cols as f64;
                    for i in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..cols {
                            let d = g.at(i, j) * gam[j];
                            sum_d += d;
                            sum_dx += d * xhat.at(i, j);
                        }
                        for j in 0..cols {
                            let d = g.at(i, j) * gam[j];
                            sx.data[i * cols + j] +=
                                inv_std[i] / n * (n * d - sum_d - xhat.at(i, j) * sum_dx);
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = self.value(Var(idx));
                    let (rows, cols) = y.shape();
                    let slot = acc_slot(&mut adj, *x, self.value(*x));
                    for i in 0..rows {
                        let dot: f64 = (0..cols).map(|j| g.at(i, j) * y.at(i, j)).sum();
                        for j in 0..cols {
                            slot.data[i * cols + j] += y.at(i, j) * (g.at(i, j) - dot);
                        }
                    }
                }
                Op::Embed { table, ids } => {
                    let slot = acc_slot(&mut adj, *table, self.value(*table));
                    for (i, &id) in ids.iter().enumerate() {
                        for (s, v) in slot.row_mut(id).iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let slot = acc_slot(&mut adj, p, self.value(p));
                        for (s, v) in slot.data.iter_mut().zip(&g.data[offset..offset + n]) {
                            *s += v;
                        }
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols;
                        let slot = acc_slot(&mut adj, p, self.value(p));
                        for i in 0..g.rows {
                            for (s, v) in slot.row_mut(i).iter_mut().zip(&g.row(i)[offset..offset + c]) {
                                *s += v;
                            }
                        }
                        offset += c;
                    }
                }
                Op::SliceCols { x, start } => {
                    let slot = acc_slot(&mut adj, *x, self.value(*x));
                    for i in 0..g.rows {
                        for (s, v) in slot.row_mut(i)[*start..*start + g.cols].iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.data[0] / targets.len().max(1) as f64;
                    let slot = acc_slot(&mut adj, *logits, self.value(*logits));
                    let cols = probs.cols;
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..cols {
                            let ind = if j == t { 1.0 } else { 0.0 };
                            slot.data[i * cols + j] += scale * (probs.at(i, j) - ind);
                        }
                    }
                }
            }
        }
    }
}

fn needs(nodes: &[Node], v: Var) -> bool {
    !matches!(nodes[v.0].op, Op::Leaf)
}

fn acc_slot<'a>(adj: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    adj[v.0].get_or_insert_with(|| Tensor::zeros(like.rows, like.cols))
}
