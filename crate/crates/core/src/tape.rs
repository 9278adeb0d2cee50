//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation eagerly; [`Tape::backward`] walks the
//! record in reverse and accumulates gradients for leaf nodes. Graphs here are
//! small (a few thousand nodes per training batch) so the tape is rebuilt from
//! scratch every step.

use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Softplus(usize),
    SumAll(usize),
    /// Row-wise softmax; the additive key mask is folded in at forward time.
    RowSoftmax {
        x: usize,
    },
    LayerNormRows {
        x: usize,
        eps: f64,
    },
    BroadcastScalar {
        x: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<usize>),
    Index {
        x: usize,
        r: usize,
        c: usize,
    },
    LogSumExp(usize),
    Max2(usize, usize),
    Clamp01(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node on the tape.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient for `v`, zero-filled if the root does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let t = &tape.nodes[v.0].value;
                Tensor::zeros(t.rows, t.cols)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (parameter or probed input).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a.0, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a.0))
    }

    /// `a [r x c] + b [1 x c]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(bt.rows, 1, "add_row expects a row vector");
        assert_eq!(at.cols, bt.cols, "add_row width mismatch");
        let mut out = at.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                out.data[r * out.cols + c] += bt.data[c];
            }
        }
        self.push(out, Op::AddRow(a.0, b.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(v, Op::SumAll(a.0))
    }

    pub fn row_softmax(&mut self, a: Var, mask: Option<Tensor>) -> Var {
        let x = self.value(a);
        if let Some(m) = &mask {
            assert!(x.same_shape(m), "softmax mask shape mismatch");
        }
        let mut out = Tensor::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let row: Vec<f64> = (0..x.cols)
                .map(|c| x.get(r, c) + mask.as_ref().map_or(0.0, |m| m.get(r, c)))
                .collect();
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&z| (z - mx).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for c in 0..x.cols {
                out.set(r, c, exps[c] / denom);
            }
        }
        self.push(out, Op::RowSoftmax { x: a.0 })
    }

    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let row = &x.data[r * x.cols..(r + 1) * x.cols];
            let mean = row.iter().sum::<f64>() / x.cols as f64;
            let var = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / x.cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..x.cols {
                out.set(r, c, (row[c] - mean) * inv);
            }
        }
        self.push(out, Op::LayerNormRows { x: a.0, eps })
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let s = self.value(a).item();
        let v = Tensor::from_vec(rows, cols, vec![s; rows * cols]);
        self.push(v, Op::BroadcastScalar { x: a.0 })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let mut out = Tensor::zeros(x.rows, len);
        for r in 0..x.rows {
            for c in 0..len {
                out.set(r, c, x.get(r, start + c));
            }
        }
        self.push(out, Op::SliceCols { x: a.0, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                for c in 0..t.cols {
                    out.set(r, off + c, t.get(r, c));
                }
            }
            off += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn index(&mut self, a: Var, r: usize, c: usize) -> Var {
        let v = Tensor::scalar(self.value(a).get(r, c));
        self.push(v, Op::Index { x: a.0, r, c })
    }

    /// log(sum(exp(x))) over every entry, max-stabilized.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mx = x.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = x.data.iter().map(|&z| (z - mx).exp()).sum();
        self.push(Tensor::scalar(mx + s.ln()), Op::LogSumExp(a.0))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max2(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), f64::max);
        self.push(v, Op::Max2(a.0, b.0))
    }

    pub fn clamp01(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.clamp(0.0, 1.0));
        self.push(v, Op::Clamp01(a.0))
    }

    // ---- composite helpers ----

    /// Dot product of two 1xN rows.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum_all(m)
    }

    pub fn l2_norm(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        let s = self.sum_all(sq);
        self.sqrt(s)
    }

    /// Cosine similarity of two 1xN rows. Caller guarantees non-zero inputs.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let d = self.dot(a, b);
        let na = self.l2_norm(a);
        let nb = self.l2_norm(b);
        let denom = self.mul(na, nb);
        self.div(d, denom)
    }

    /// Rescale a 1xN row to unit L2 norm.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let n = self.l2_norm(a);
        let cols = self.value(a).cols;
        let nb = self.broadcast_scalar(n, 1, cols);
        self.div(a, nb)
    }

    /// max(a, b, 0) for scalars.
    pub fn hinge_max(&mut self, a: Var, b: Var) -> Var {
        let m = self.max2(a, b);
        self.relu(m)
    }

    /// Mean of the first `valid` rows of `a`.
    pub fn masked_mean_rows(&mut self, a: Var, valid: usize) -> Var {
        let t = self.value(a);
        assert!(valid >= 1 && valid <= t.rows, "invalid row count");
        let mut w = Tensor::zeros(1, t.rows);
        for c in 0..valid {
            w.data[c] = 1.0 / valid as f64;
        }
        let wv = self.constant(w);
        self.matmul(wv, a)
    }

    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.value(root).data.len(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], j: usize, delta: Tensor| {
            match &mut grads[j] {
                Some(t) => t.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                add_to(grads, *a, g.zip(&self.nodes[*b].value, |gv, bv| gv * bv));
                add_to(grads, *b, g.zip(&self.nodes[*a].value, |gv, av| gv * av));
            }
            Op::Div(a, b) => {
                let bt = &self.nodes[*b].value;
                let at = &self.nodes[*a].value;
                add_to(grads, *a, g.zip(bt, |gv, bv| gv / bv));
                let mut db = Tensor::zeros(g.rows, g.cols);
                for k in 0..g.data.len() {
                    db.data[k] = -g.data[k] * at.data[k] / (bt.data[k] * bt.data[k]);
                }
                add_to(grads, *b, db);
            }
            Op::Neg(a) => add_to(grads, *a, g.scale(-1.0)),
            Op::Scale(a, s) => add_to(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => add_to(grads, *a, g.clone()),
            Op::AddRow(a, b) => {
                add_to(grads, *a, g.clone());
                let mut db = Tensor::zeros(1, g.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        db.data[c] += g.get(r, c);
                    }
                }
                add_to(grads, *b, db);
            }
            Op::MatMul(a, b) => {
                let at = &self.nodes[*a].value;
                let bt = &self.nodes[*b].value;
                add_to(grads, *a, g.matmul(&bt.transpose()));
                add_to(grads, *b, at.transpose().matmul(g));
            }
            Op::Transpose(a) => add_to(grads, *a, g.transpose()),
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g.zip(y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g.zip(y, |gv, yv| gv * (1.0 - yv * yv)));
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                add_to(grads, *a, g.zip(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Exp(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g.zip(y, |gv, yv| gv * yv));
            }
            Op::Ln(a) => {
                let x = &self.nodes[*a].value;
                add_to(grads, *a, g.zip(x, |gv, xv| gv / xv));
            }
            Op::Sqrt(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g.zip(y, |gv, yv| gv * 0.5 / yv));
            }
            Op::Softplus(a) => {
                let x = &self.nodes[*a].value;
                add_to(grads, *a, g.zip(x, |gv, xv| gv * sigmoid(xv)));
            }
            Op::SumAll(a) => {
                let x = &self.nodes[*a].value;
                let gv = g.item();
                add_to(grads, *a, Tensor::from_vec(x.rows, x.cols, vec![gv; x.data.len()]));
            }
            Op::RowSoftmax { x } => {
                let y = &self.nodes[i].value;
                let mut dx = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let dot: f64 = (0..y.cols).map(|c| g.get(r, c) * y.get(r, c)).sum();
                    for c in 0..y.cols {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::LayerNormRows { x, eps } => {
                let xt = &self.nodes[*x].value;
                let y = &self.nodes[i].value;
                let n = xt.cols as f64;
                let mut dx = Tensor::zeros(xt.rows, xt.cols);
                for r in 0..xt.rows {
                    let row = &xt.data[r * xt.cols..(r + 1) * xt.cols];
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let g_mean: f64 = (0..xt.cols).map(|c| g.get(r, c)).sum::<f64>() / n;
                    let gy_mean: f64 =
                        (0..xt.cols).map(|c| g.get(r, c) * y.get(r, c)).sum::<f64>() / n;
                    for c in 0..xt.cols {
                        dx.set(r, c, inv * (g.get(r, c) - g_mean - y.get(r, c) * gy_mean));
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::BroadcastScalar { x } => {
                add_to(grads, *x, Tensor::scalar(g.data.iter().sum()));
            }
            Op::SliceCols { x, start, len } => {
                let xt = &self.nodes[*x].value;
                let mut dx = Tensor::zeros(xt.rows, xt.cols);
                for r in 0..g.rows {
                    for c in 0..*len {
                        dx.set(r, start + c, g.get(r, c));
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pt = &self.nodes[p].value;
                    let mut dp = Tensor::zeros(pt.rows, pt.cols);
                    for r in 0..pt.rows {
                        for c in 0..pt.cols {
                            dp.set(r, c, g.get(r, off + c));
                        }
                    }
                    add_to(grads, p, dp);
                    off += pt.cols;
                }
            }
            Op::Index { x, r, c } => {
                let xt = &self.nodes[*x].value;
                let mut dx = Tensor::zeros(xt.rows, xt.cols);
                dx.set(*r, *c, g.item());
                add_to(grads, *x, dx);
            }
            Op::LogSumExp(a) => {
                let x = &self.nodes[*a].value;
                let mx = x.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = x.data.iter().map(|&z| (z - mx).exp()).sum();
                let gv = g.item();
                let dx = x.map(|z| gv * (z - mx).exp() / denom);
                add_to(grads, *a, dx);
            }
            Op::Max2(a, b) => {
                let at = &self.nodes[*a].value;
                let bt = &self.nodes[*b].value;
                let mut da = Tensor::zeros(g.rows, g.cols);
                let mut db = Tensor::zeros(g.rows, g.cols);
                for k in 0..g.data.len() {
                    if at.data[k] >= bt.data[k] {
                        da.data[k] = g.data[k];
                    } else {
                        db.data[k] = g.data[k];
                    }
                }
                add_to(grads, *a, da);
                add_to(grads, *b, db);
            }
            Op::Clamp01(a) => {
                let x = &self.nodes[*a].value;
                add_to(
                    grads,
                    *a,
                    g.zip(x, |gv, xv| if xv > 0.0 && xv < 1.0 { gv } else { 0.0 }),
                );
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_scalar(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn grad_of_product_chain() {
        // f(x) = sigmoid(x) * tanh(x)
        let eval = |x: f64| sigmoid(x) * x.tanh();
        let x0 = 0.7;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(x0));
        let s = tape.sigmoid(x);
        let t = tape.tanh(x);
        let y = tape.mul(s, t);
        let grads = tape.backward(y);
        let g = grads.wrt(&tape, x).item();
        let fd = fd_scalar(eval, x0);
        assert!((g - fd).abs() < 1e-8, "g={g} fd={fd}");
    }

    #[test]
    fn grad_of_matmul_sum() {
        let a0 = Tensor::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.2, -0.3]);
        let b0 = Tensor::from_vec(3, 2, vec![1.0, 0.5, -0.5, 2.0, 0.25, -1.5]);
        let mut tape = Tape::new();
        let a = tape.leaf(a0.clone());
        let b = tape.constant(b0.clone());
        let c = tape.matmul(a, b);
        let s = tape.sum_all(c);
        let grads = tape.backward(s);
        let ga = grads.wrt(&tape, a);
        // d(sum(AB))/dA[i,k] = sum_j B[k,j]
        for i in 0..2 {
            for k in 0..3 {
                let expect: f64 = (0..2).map(|j| b0.get(k, j)).sum();
                assert!((ga.get(i, k) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_grad_matches_fd() {
        let x0 = Tensor::from_vec(2, 3, vec![0.3, -0.7, 1.1, 2.0, 0.0, -1.0]);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = tape.row_softmax(x, None);
        for r in 0..2 {
            let s: f64 = (0..3).map(|c| tape.value(y).get(r, c)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // loss = y[0,0]
        let l = tape.index(y, 0, 0);
        let grads = tape.backward(l);
        let g = grads.wrt(&tape, x);
        for k in 0..3 {
            let mut xp = x0.clone();
            let h = 1e-6;
            xp.data[k] += h;
            let mut xm = x0.clone();
            xm.data[k] -= h;
            let f = |t: &Tensor| {
                let mx = t.data[0..3].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = t.data[0..3].iter().map(|&z| (z - mx).exp()).collect();
                e[0] / e.iter().sum::<f64>()
            };
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((g.data[k] - fd).abs() < 1e-6, "k={k}");
        }
    }

    #[test]
    fn logsumexp_grad_is_softmax() {
        let x0 = Tensor::row(vec![1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let l = tape.logsumexp(x);
        let grads = tape.backward(l);
        let g = grads.wrt(&tape, x);
        let mx = 3.0f64;
        let e: Vec<f64> = x0.data.iter().map(|&z| (z - mx).exp()).collect();
        let d: f64 = e.iter().sum();
        for k in 0..3 {
            assert!((g.data[k] - e[k] / d).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_grad_matches_fd() {
        let x0 = Tensor::from_vec(1, 4, vec![0.2, -0.4, 1.3, 0.8]);
        let eps = 1e-5;
        let f = |t: &Tensor| {
            let n = 4.0;
            let mean = t.data.iter().sum::<f64>() / n;
            let var = t.data.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            // weighted sum of normalized entries
            t.data
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as f64 + 1.0) * (v - mean) * inv)
                .sum::<f64>()
        };
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = tape.layer_norm_rows(x, eps);
        let w = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0, 4.0]));
        let yw = tape.mul(y, w);
        let l = tape.sum_all(yw);
        let grads = tape.backward(l);
        let g = grads.wrt(&tape, x);
        for k in 0..4 {
            let h = 1e-6;
            let mut xp = x0.clone();
            xp.data[k] += h;
            let mut xm = x0.clone();
            xm.data[k] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((g.data[k] - fd).abs() < 1e-6, "k={k} g={} fd={fd}", g.data[k]);
        }
    }

    #[test]
    fn cosine_of_parallel_vectors_is_one() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        let b = tape.constant(Tensor::row(vec![2.0, 4.0, 6.0]));
        let c = tape.cosine(a, b);
        assert!((tape.value(c).item() - 1.0).abs() < 1e-12);
    }
}
