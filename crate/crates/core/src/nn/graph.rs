//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value and
//! whatever the backward pass needs. [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients. Ops are fused where that keeps the
//! backward pass simple (attention, layer norm, the loss functions).
//!
//! Any op that produces a non-finite value poisons the graph; the first such
//! op is reported by [`Graph::check`].

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    MaskMul(Var, Vec<f64>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    MeanPool {
        x: Var,
        batch: usize,
        seq: usize,
        mask: Vec<bool>,
    },
    Cosine {
        a: Var,
        b: Var,
        a_norm: Vec<f64>,
        b_norm: Vec<f64>,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    SigmoidBce {
        logits: Var,
        targets: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    DotConst(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    error: Option<String>,
}

pub const GELU_COEF: f64 = 0.044715;
const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`
pub fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x)
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Var {
        if self.error.is_none() && !value.is_finite() {
            self.error = Some(format!("non-finite output from {name}"));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn check(&self) -> Result<(), NnError> {
        match &self.error {
            Some(msg) => Err(NnError::NonFinite(msg.clone())),
            None => Ok(()),
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, "constant")
    }

    /// Leaf bound to a named parameter; its gradient is reported by
    /// [`Gradients::params`]. Requesting the same name twice returns the same leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return *v;
        }
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .clone();
        let v = self.push(t, Op::Leaf, "param");
        self.params.push((name.to_string(), v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims2();
        let bt = self.value(b);
        assert_eq!(bt.shape.len(), 2, "matmul rhs must be a matrix");
        assert_eq!(bt.shape[0], k, "matmul inner dimensions differ");
        let n = bt.shape[1];
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.value(a).data, false, &bt.data, false, &mut out, 0.0);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), "matmul")
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (m, n) = self.value(x).dims2();
        assert_eq!(self.value(b).len(), n, "bias width");
        let mut out = self.value(x).data.clone();
        let bias = &self.value(b).data;
        for r in 0..m {
            for (o, bv) in out[r * n..(r + 1) * n].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let shape = self.value(x).shape.clone();
        self.push(Tensor::new(shape, out), Op::AddBias(x, b), "add_bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).len(), self.value(b).len(), "add shapes");
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape.clone();
        self.push(Tensor::new(shape, data), Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).len(), self.value(b).len(), "mul shapes");
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape.clone();
        self.push(Tensor::new(shape, data), Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|v| v * c).collect());
        self.push(out, Op::Scale(x, c), "scale")
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, name: &str) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|&v| f(v)).collect());
        self.push(out, op, name)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, gelu_scalar, Op::Gelu(x), "gelu")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x), "tanh")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid_scalar, Op::Sigmoid(x), "sigmoid")
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let t = self.value(x);
        assert_eq!(t.len(), mask.len(), "mask length");
        let out = Tensor::new(
            t.shape.clone(),
            t.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
        );
        self.push(out, Op::MaskMul(x, mask), "dropout")
    }

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (m, n) = self.value(x).dims2();
        assert_eq!(self.value(gamma).len(), n);
        assert_eq!(self.value(beta).len(), n);
        let xs = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let shape = self.value(x).shape.clone();
        self.push(
            Tensor::new(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    /// Scaled dot-product attention over `batch` sequences of `seq` rows each.
    /// `q`, `k`, `v` are `[batch·seq × width]`; `mask[b·seq + j]` marks valid keys.
    /// Masked keys get exactly zero weight.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        mask: &[bool],
    ) -> Var {
        let (rows, width) = self.value(q).dims2();
        assert_eq!(rows, batch * seq);
        assert_eq!(mask.len(), rows);
        assert_eq!(width % heads, 0);
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            &self.value(q).data,
            &self.value(k).data,
            &self.value(v).data,
        );
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * width];
        let mut scores = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * width + off..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..seq {
                        if mask[b * seq + j] {
                            let kj = &kd[(b * seq + j) * width + off..][..dh];
                            let s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                            scores[j] = s;
                            max = max.max(s);
                        }
                    }
                    let p = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                    let mut total = 0.0;
                    for j in 0..seq {
                        if mask[b * seq + j] {
                            p[j] = (scores[j] - max).exp();
                            total += p[j];
                        }
                    }
                    let o = &mut out[(b * seq + i) * width + off..][..dh];
                    for j in 0..seq {
                        if mask[b * seq + j] {
                            p[j] /= total;
                            let vj = &vd[(b * seq + j) * width + off..][..dh];
                            for (oo, vv) in o.iter_mut().zip(vj) {
                                *oo += p[j] * vv;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::matrix(rows, width, out),
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            },
            "attention",
        )
    }

    /// Attention weights recorded by an attention node, laid out
    /// `[batch][head][query][key]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Rows of `table` selected by `indices` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let (vocab, n) = self.value(table).dims2();
        let t = &self.value(table).data;
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            assert!(i < vocab, "index {i} out of range {vocab}");
            out.extend_from_slice(&t[i * n..(i + 1) * n]);
        }
        self.push(
            Tensor::matrix(indices.len(), n, out),
            Op::Gather(table, indices.to_vec()),
            "embedding_lookup",
        )
    }

    /// Mean over valid rows of each sequence: `[batch·seq × n] -> [batch × n]`.
    pub fn mean_pool_masked(&mut self, x: Var, batch: usize, seq: usize, mask: &[bool]) -> Var {
        let (rows, n) = self.value(x).dims2();
        assert_eq!(rows, batch * seq);
        assert_eq!(mask.len(), rows);
        let xs = &self.value(x).data;
        let mut out = vec![0.0; batch * n];
        for b in 0..batch {
            let count = (0..seq).filter(|&t| mask[b * seq + t]).count();
            assert!(count > 0, "sequence {b} has no valid positions");
            let o = &mut out[b * n..(b + 1) * n];
            for t in (0..seq).filter(|&t| mask[b * seq + t]) {
                for (oo, v) in o.iter_mut().zip(&xs[(b * seq + t) * n..][..n]) {
                    *oo += v / count as f64;
                }
            }
        }
        self.push(
            Tensor::matrix(batch, n, out),
            Op::MeanPool {
                x,
                batch,
                seq,
                mask: mask.to_vec(),
            },
            "mean_pool_masked",
        )
    }

    /// Pairwise cosine similarities between rows: `[m × n], [p × n] -> [m × p]`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        let (p, n2) = self.value(b).dims2();
        assert_eq!(n, n2);
        let norms = |t: &Tensor, r: usize| -> Vec<f64> {
            (0..r)
                .map(|i| t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS))
                .collect()
        };
        let a_norm = norms(self.value(a), m);
        let b_norm = norms(self.value(b), p);
        let mut dots = vec![0.0; m * p];
        gemm(m, n, p, &self.value(a).data, false, &self.value(b).data, true, &mut dots, 0.0);
        for i in 0..m {
            for j in 0..p {
                dots[i * p + j] /= a_norm[i] * b_norm[j];
            }
        }
        self.push(
            Tensor::matrix(m, p, dots),
            Op::Cosine {
                a,
                b,
                a_norm,
                b_norm,
            },
            "cosine_similarity",
        )
    }

    /// Mean softmax cross-entropy over rows whose target is `Some`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let (m, c) = self.value(logits).dims2();
        assert_eq!(targets.len(), m);
        let l = &self.value(logits).data;
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        let mut count = 0usize;
        for r in 0..m {
            let row = &l[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..c {
                probs[r * c + j] = (row[j] - max).exp() / total;
            }
            if let Some(t) = targets[r] {
                assert!(t < c, "target {t} out of range {c}");
                loss += -(row[t] - max - total.ln());
                count += 1;
            }
        }
        let value = if count == 0 { 0.0 } else { loss / count as f64 };
        self.push(
            Tensor::scalar(value),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "softmax_cross_entropy",
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn sigmoid_binary_cross_entropy(&mut self, logits: Var, targets: &[f64]) -> Var {
        let l = &self.value(logits).data;
        assert_eq!(l.len(), targets.len());
        // log(1+e^x) - t·x, stable form
        let loss: f64 = l
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / l.len().max(1) as f64;
        self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
            "sigmoid_binary_cross_entropy",
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.value(x).dims2();
        assert!(start + len <= n);
        let xs = &self.value(x).data;
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xs[r * n + start..r * n + start + len]);
        }
        self.push(Tensor::matrix(m, len, out), Op::SliceCols { x, start }, "slice_cols")
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.value(x).dims2();
        assert!(start + len <= m);
        let out = self.value(x).data[start * n..(start + len) * n].to_vec();
        self.push(Tensor::matrix(len, n, out), Op::SliceRows { x, start }, "slice_rows")
    }

    /// `Σ w_i x_i` for a constant weight vector: reduces any tensor to a scalar.
    pub fn dot_const(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let t = self.value(x);
        assert_eq!(t.len(), weights.len());
        let s = t.data.iter().zip(&weights).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(s), Op::DotConst(x, weights), "dot_const")
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, data: Vec<f64>| {
            let shape = self.value(v).shape.clone();
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, b) in t.data.iter_mut().zip(&data) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(Tensor::new(shape, data)),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).shape[1];
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, &g.data, false, &self.value(*b).data, true, &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, &self.value(*a).data, true, &g.data, false, &mut db, 0.0);
                acc(*a, da);
                acc(*b, db);
            }
            Op::AddBias(x, b) => {
                let (m, n) = g.dims2();
                let mut db = vec![0.0; n];
                for r in 0..m {
                    for (d, gv) in db.iter_mut().zip(&g.data[r * n..(r + 1) * n]) {
                        *d += gv;
                    }
                }
                acc(*x, g.data.clone());
                acc(*b, db);
            }
            Op::Add(a, b) => {
                acc(*a, g.data.clone());
                acc(*b, g.data.clone());
            }
            Op::Mul(a, b) => {
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                acc(*a, g.data.iter().zip(bv).map(|(x, y)| x * y).collect());
                acc(*b, g.data.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::Scale(x, c) => acc(*x, g.data.iter().map(|v| v * c).collect()),
            Op::Gelu(x) => {
                let xv = &self.value(*x).data;
                acc(*x, g.data.iter().zip(xv).map(|(gv, &v)| gv * gelu_grad(v)).collect());
            }
            Op::Tanh(x) => {
                let y = &node.value.data;
                acc(*x, g.data.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect());
            }
            Op::Sigmoid(x) => {
                let y = &node.value.data;
                acc(*x, g.data.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect());
            }
            Op::MaskMul(x, mask) => acc(*x, g.data.iter().zip(mask).map(|(a, b)| a * b).collect()),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = g.dims2();
                let gam = &self.value(*gamma).data;
                let mut dx = vec![0.0; m * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for r in 0..m {
                    let gr = &g.data[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut sum_d = 0.0;
                    let mut sum_dh = 0.0;
                    for c in 0..n {
                        let d = gr[c] * gam[c];
                        sum_d += d;
                        sum_dh += d * hr[c];
                        dgamma[c] += gr[c] * hr[c];
                        dbeta[c] += gr[c];
                    }
                    for c in 0..n {
                        let d = gr[c] * gam[c];
                        dx[r * n + c] = inv_std[r] * (d - sum_d / n as f64 - hr[c] * sum_dh / n as f64);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let (rows, width) = g.dims2();
                let dh = width / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (
                    &self.value(*q).data,
                    &self.value(*k).data,
                    &self.value(*v).data,
                );
                let mut dq = vec![0.0; rows * width];
                let mut dk = vec![0.0; rows * width];
                let mut dv = vec![0.0; rows * width];
                let mut dp = vec![0.0; seq];
                for b in 0..batch {
                    for h in 0..heads {
                        let off = h * dh;
                        for i in 0..seq {
                            let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                            let go = &g.data[(b * seq + i) * width + off..][..dh];
                            let mut dot = 0.0;
                            for j in 0..seq {
                                if p[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                let row = (b * seq + j) * width + off;
                                let vj = &vd[row..row + dh];
                                dp[j] = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                                dot += p[j] * dp[j];
                                for (d, gv) in dv[row..row + dh].iter_mut().zip(go) {
                                    *d += p[j] * gv;
                                }
                            }
                            let qrow = (b * seq + i) * width + off;
                            for j in 0..seq {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let ds = p[j] * (dp[j] - dot) * scale;
                                let krow = (b * seq + j) * width + off;
                                for c in 0..dh {
                                    dq[qrow + c] += ds * kd[krow + c];
                                    dk[krow + c] += ds * qd[qrow + c];
                                }
                            }
                        }
                    }
                }
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Gather(table, indices) => {
                let (vocab, n) = self.value(*table).dims2();
                let mut dt = vec![0.0; vocab * n];
                for (r, &i) in indices.iter().enumerate() {
                    for (d, gv) in dt[i * n..(i + 1) * n].iter_mut().zip(&g.data[r * n..(r + 1) * n]) {
                        *d += gv;
                    }
                }
                acc(*table, dt);
            }
            Op::MeanPool {
                x,
                batch,
                seq,
                mask,
            } => {
                let n = g.dims2().1;
                let mut dx = vec![0.0; batch * seq * n];
                for b in 0..*batch {
                    let count = (0..*seq).filter(|&t| mask[b * seq + t]).count() as f64;
                    for t in (0..*seq).filter(|&t| mask[b * seq + t]) {
                        for (d, gv) in dx[(b * seq + t) * n..][..n].iter_mut().zip(&g.data[b * n..(b + 1) * n]) {
                            *d = gv / count;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Cosine {
                a,
                b,
                a_norm,
                b_norm,
            } => {
                let (m, n) = self.value(*a).dims2();
                let p = b_norm.len();
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                let c = &node.value.data;
                let mut da = vec![0.0; m * n];
                let mut db = vec![0.0; p * n];
                for i in 0..m {
                    for j in 0..p {
                        let gij = g.data[i * p + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let cij = c[i * p + j];
                        for t in 0..n {
                            let ah = av[i * n + t] / a_norm[i];
                            let bh = bv[j * n + t] / b_norm[j];
                            da[i * n + t] += gij * (bh - cij * ah) / a_norm[i];
                            db[j * n + t] += gij * (ah - cij * bh) / b_norm[j];
                        }
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            } => {
                let (m, c) = self.value(*logits).dims2();
                let count = targets.iter().filter(|t| t.is_some()).count().max(1) as f64;
                let scale = g.item() / count;
                let mut dl = vec![0.0; m * c];
                for r in 0..m {
                    if let Some(t) = targets[r] {
                        for j in 0..c {
                            dl[r * c + j] = probs[r * c + j] * scale;
                        }
                        dl[r * c + t] -= scale;
                    }
                }
                acc(*logits, dl);
            }
            Op::SigmoidBce { logits, targets } => {
                let l = &self.value(*logits).data;
                let scale = g.item() / l.len().max(1) as f64;
                acc(
                    *logits,
                    l.iter()
                        .zip(targets)
                        .map(|(&x, &t)| (sigmoid_scalar(x) - t) * scale)
                        .collect(),
                );
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).dims2();
                let len = g.dims2().1;
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + len].copy_from_slice(&g.data[r * len..(r + 1) * len]);
                }
                acc(*x, dx);
            }
            Op::SliceRows { x, start } => {
                let (m, n) = self.value(*x).dims2();
                let mut dx = vec![0.0; m * n];
                dx[start * n..start * n + g.len()].copy_from_slice(&g.data);
                acc(*x, dx);
            }
            Op::DotConst(x, w) => {
                let s = g.item();
                acc(*x, w.iter().map(|v| v * s).collect());
            }
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter leaf, keyed by name. Parameters that did
    /// not influence the loss get zeros.
    pub fn params(&self, store: &ParamStore) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, v) in &self.params {
            let g = match &self.grads[v.0] {
                Some(t) => t.clone(),
                None => Tensor::zeros(&store.get(name).expect("registered").shape),
            };
            out.insert(name.clone(), g);
        }
        out
    }
}
