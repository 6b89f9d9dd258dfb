//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates vector-Jacobian products. Only the
//! operations the encoder and its losses need are provided.

use crate::ear::shannon_entropy;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SelectRow(Var, usize),
    MeanOf(Vec<Var>),
    Sum(Vec<Var>),
    RowEntropy(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        weight: f64,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.as_slice()) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), c.shape());
        let data = x
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .map(|(x, c)| x * c)
            .collect();
        let v = Matrix::from_vec(x.rows(), x.cols(), data).expect("shape checked");
        self.push(v, Op::MulConst(a, c))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    /// Per-row normalization over the feature dimension followed by an affine
    /// map with `1×c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut normed = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let n = (row[c] - mean) * inv;
                normed.set(r, c, n);
                out.set(r, c, g[c] * n + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    /// Row-wise softmax. Columns with `key_mask[j] == false` receive exactly
    /// zero probability and are excluded from the normalizer.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Var {
        let v = softmax_rows(self.value(a), key_mask);
        self.push(v, Op::Softmax(a))
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            v,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows(), rows);
                v.row_mut(r)[offset..offset + src.cols()].copy_from_slice(src.row(r));
                offset += src.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Var {
        let v = Matrix::row_vector(self.value(a).row(row));
        self.push(v, Op::SelectRow(a, row))
    }

    /// Elementwise mean of same-shaped inputs.
    pub fn mean_of(&mut self, parts: &[Var]) -> Var {
        let v = self.sum_values(parts).scaled(1.0 / parts.len() as f64);
        self.push(v, Op::MeanOf(parts.to_vec()))
    }

    /// Elementwise sum of same-shaped inputs.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let v = self.sum_values(parts);
        self.push(v, Op::Sum(parts.to_vec()))
    }

    fn sum_values(&self, parts: &[Var]) -> Matrix {
        let mut v = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            v.add_assign(self.value(p));
        }
        v
    }

    /// Shannon entropy (nats) of each row, as an `r×1` column.
    pub fn row_entropy(&mut self, p: Var) -> Var {
        let pv = self.value(p);
        let data = (0..pv.rows()).map(|r| shannon_entropy(pv.row(r))).collect();
        let v = Matrix::from_vec(pv.rows(), 1, data).expect("shape");
        self.push(v, Op::RowEntropy(p))
    }

    /// Mean of all entries, as a `1×1` scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::filled(1, 1, x.sum() / x.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// `weight · (−log softmax(logits)[label])` for a `1×k` logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize, weight: f64) -> Var {
        let z = self.value(logits).as_slice();
        let probs = softmax(z);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let v = Matrix::filled(1, 1, weight * (lse - z[label]));
        self.push(
            v,
            Op::CrossEntropy {
                logits,
                label,
                weight,
                probs,
            },
        )
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    // Leaves keep their gradient for the caller.
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, v) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scaled(*s)),
                Op::MulConst(a, c) => {
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(c.as_slice())
                        .map(|(g, c)| g * c)
                        .collect();
                    let ga = Matrix::from_vec(g.rows(), g.cols(), data).expect("shape");
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data = x
                        .as_slice()
                        .iter()
                        .zip(g.as_slice())
                        .map(|(&x, &g)| {
                            let u = GELU_C * (x + GELU_A * x * x * x);
                            let t = u.tanh();
                            let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                            g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                        })
                        .collect();
                    let ga = Matrix::from_vec(x.rows(), x.cols(), data).expect("shape");
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gv = self.value(*gain).as_slice();
                    let (rows, cols) = g.shape();
                    let mut g_gain = Matrix::zeros(1, cols);
                    let mut g_bias = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let gr = g.row(r);
                        let nr = normed.row(r);
                        let mut mean_d = 0.0;
                        let mut mean_dn = 0.0;
                        for c in 0..cols {
                            g_gain.as_mut_slice()[c] += gr[c] * nr[c];
                            g_bias.as_mut_slice()[c] += gr[c];
                            let d = gr[c] * gv[c];
                            mean_d += d;
                            mean_dn += d * nr[c];
                        }
                        mean_d /= n;
                        mean_dn /= n;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            out[c] = inv_std[r] * (d - mean_d - nr[c] * mean_dn);
                        }
                    }
                    accumulate(&mut grads, *gain, g_gain);
                    accumulate(&mut grads, *bias, g_bias);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for (o, (y, g)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = y * (g - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut gp = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::SelectRow(a, row) => {
                    let x = self.value(*a);
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    ga.row_mut(*row).copy_from_slice(g.as_slice());
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanOf(parts) => {
                    let share = g.scaled(1.0 / parts.len() as f64);
                    for &p in parts {
                        accumulate(&mut grads, p, share.clone());
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
                Op::RowEntropy(p) => {
                    let pv = self.value(*p);
                    let mut gp = Matrix::zeros(pv.rows(), pv.cols());
                    for r in 0..pv.rows() {
                        let gr = g.get(r, 0);
                        for (o, &q) in gp.row_mut(r).iter_mut().zip(pv.row(r)) {
                            if q > 0.0 {
                                *o = -gr * (q.ln() + 1.0);
                            }
                        }
                    }
                    accumulate(&mut grads, *p, gp);
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let s = g.get(0, 0) / x.len() as f64;
                    accumulate(&mut grads, *a, Matrix::filled(x.rows(), x.cols(), s));
                }
                Op::CrossEntropy {
                    logits,
                    label,
                    weight,
                    probs,
                } => {
                    let s = g.get(0, 0) * weight;
                    let data = probs
                        .iter()
                        .enumerate()
                        .map(|(k, p)| s * (p - if k == *label { 1.0 } else { 0.0 }))
                        .collect();
                    accumulate(
                        &mut grads,
                        *logits,
                        Matrix::from_vec(1, probs.len(), data).expect("shape"),
                    );
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the root with respect to a leaf; `None` if the leaf does
    /// not influence the root.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax restricted to the unmasked columns.
pub fn softmax_rows(x: &Matrix, key_mask: Option<&[bool]>) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let keep = |j: usize| key_mask.is_none_or(|m| m[j]);
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row
            .iter()
            .enumerate()
            .filter(|(j, _)| keep(*j))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let o = out.row_mut(r);
        let mut total = 0.0;
        for j in 0..row.len() {
            if keep(j) {
                o[j] = (row[j] - max).exp();
                total += o[j];
            }
        }
        for v in o.iter_mut() {
            *v /= total;
        }
    }
    out
}
