//! Reverse-mode automatic differentiation over [`Array2`] values.
//!
//! A [`Tape`] is an append-only arena of nodes; every operator records its
//! parents by index, so the arena order is already topological. `backward`
//! walks it once in reverse, accumulating adjoints. A tape belongs to one
//! logical thread; nothing here is shared or locked.

use super::array::dot;
use super::{Array2, NumericsError, Result};

/// Epsilon inside the root-mean-square denominator. Part of the definition
/// of the normalization, so checkpointed models and re-implementations must
/// agree on it.
pub const RMSNORM_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
/// Base of the rotary position frequencies.
const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    MatMulNT { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Hadamard { a: usize, b: usize },
    MulRowVec { a: usize, g: usize },
    RmsNorm { a: usize },
    Gelu { a: usize },
    SoftmaxRows { a: usize },
    CausalSoftmax { a: usize },
    Rope { a: usize },
    ColSlice { a: usize, start: usize, len: usize },
    ConcatCols { parts: Vec<usize> },
    EmbedRows { table: usize, ids: Vec<usize> },
    RowSelect { a: usize, b: usize, choose_a: Vec<bool> },
    CrossEntropy { logits: usize, targets: Vec<Option<usize>> },
    Sum { a: usize },
}

struct Node {
    value: Array2,
    op: Op,
}

/// Adjoints produced by [`Tape::backward`]. Nodes the loss does not depend
/// on have no entry.
pub struct Gradients {
    grads: Vec<Option<Array2>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array2> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, materializing zeros when the loss ignored it.
    pub fn get_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Array2 {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Array2::zeros(shape.0, shape.1),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2 {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array2, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers an input or parameter value.
    pub fn leaf(&mut self, value: Array2) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul { a: a.0, b: b.0 }))
    }

    /// `a * b^T`; the workhorse for linear layers whose weights are stored
    /// as (output x input).
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(v, Op::MatMulNT { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale { a: a.0, c })
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Hadamard { a: a.0, b: b.0 }))
    }

    /// Broadcast-multiplies every row of `a` by the `1 x n` vector `g`.
    pub fn mul_row_vec(&mut self, a: NodeId, g: NodeId) -> Result<NodeId> {
        let (av, gv) = (self.value(a), self.value(g));
        if gv.rows() != 1 || gv.cols() != av.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "mul_row_vec",
                a: av.shape(),
                b: gv.shape(),
            });
        }
        let mut out = av.clone();
        for i in 0..out.rows() {
            for (x, &s) in out.row_mut(i).iter_mut().zip(gv.row(0)) {
                *x *= s;
            }
        }
        Ok(self.push(out, Op::MulRowVec { a: a.0, g: g.0 }))
    }

    /// Rowwise x / sqrt(mean(x^2) + eps); unit root-mean-square up to eps.
    pub fn rmsnorm(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.cols() == 0 {
            return Err(NumericsError::Empty { op: "rmsnorm" });
        }
        let mut out = av.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let inv = 1.0 / rms(row);
            for x in row {
                *x *= inv;
            }
        }
        Ok(self.push(out, Op::RmsNorm { a: a.0 }))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu { a: a.0 })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.cols() == 0 {
            return Err(NumericsError::Empty { op: "softmax_rows" });
        }
        let mut out = av.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        Ok(self.push(out, Op::SoftmaxRows { a: a.0 }))
    }

    /// Rowwise softmax over positions j <= i of a square score matrix;
    /// entries above the diagonal are exactly zero. Masking happens inside
    /// the op so no non-finite sentinel ever sits on the tape.
    pub fn causal_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.rows() != av.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "causal_softmax",
                a: av.shape(),
                b: av.shape(),
            });
        }
        let mut out = Array2::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            let src = &av.row(i)[..=i];
            let dst = &mut out.row_mut(i)[..=i];
            dst.copy_from_slice(src);
            softmax_in_place(dst);
        }
        Ok(self.push(out, Op::CausalSoftmax { a: a.0 }))
    }

    /// Rotary position encoding over a per-head `seq x head_dim` slab; the
    /// row index is the position.
    pub fn rope(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.cols() % 2 != 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "rope",
                a: av.shape(),
                b: (av.rows(), 2),
            });
        }
        let mut out = av.clone();
        rope_rows(&mut out, 1.0);
        Ok(self.push(out, Op::Rope { a: a.0 }))
    }

    pub fn col_slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(NumericsError::IndexOutOfRange {
                op: "col_slice",
                index: start + len,
                len: av.cols(),
            });
        }
        let mut out = Array2::zeros(av.rows(), len);
        for i in 0..av.rows() {
            out.row_mut(i).copy_from_slice(&av.row(i)[start..start + len]);
        }
        Ok(self.push(out, Op::ColSlice { a: a.0, start, len }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NumericsError::Empty { op: "concat_cols" });
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    a: (rows, 0),
                    b: pv.shape(),
                });
            }
            cols += pv.cols();
        }
        let mut out = Array2::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                out.row_mut(i)[off..off + pv.cols()].copy_from_slice(pv.row(i));
                off += pv.cols();
            }
        }
        Ok(self.push(
            out,
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.0).collect(),
            },
        ))
    }

    /// Gathers rows of an embedding table by token id.
    pub fn embed_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        for &id in ids {
            if id >= tv.rows() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "embed_rows",
                    index: id,
                    len: tv.rows(),
                });
            }
        }
        let mut out = Array2::zeros(ids.len(), tv.cols());
        for (p, &id) in ids.iter().enumerate() {
            out.row_mut(p).copy_from_slice(tv.row(id));
        }
        Ok(self.push(
            out,
            Op::EmbedRows {
                table: table.0,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Per-row hard selection: row i of the result is row i of `a` where
    /// `choose_a[i]`, else row i of `b`. Values are copied bit-for-bit and
    /// the gradient flows only into the chosen side of each row.
    pub fn row_select(&mut self, a: NodeId, b: NodeId, choose_a: &[bool]) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "row_select",
                a: av.shape(),
                b: bv.shape(),
            });
        }
        if choose_a.len() != av.rows() {
            return Err(NumericsError::IndexOutOfRange {
                op: "row_select",
                index: choose_a.len(),
                len: av.rows(),
            });
        }
        let mut out = Array2::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            let src = if choose_a[i] { av.row(i) } else { bv.row(i) };
            out.row_mut(i).copy_from_slice(src);
        }
        Ok(self.push(
            out,
            Op::RowSelect {
                a: a.0,
                b: b.0,
                choose_a: choose_a.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood of `targets` under rowwise softmax of
    /// `logits`. Rows with `None` targets (padding) are excluded from the
    /// mean. Returns a 1x1 node.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                a: (targets.len(), 1),
                b: lv.shape(),
            });
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= lv.cols() {
                    return Err(NumericsError::IndexOutOfRange {
                        op: "cross_entropy",
                        index: t,
                        len: lv.cols(),
                    });
                }
                total += log_sum_exp(lv.row(i)) - lv.at(i, t);
                count += 1;
            }
        }
        if count == 0 {
            return Err(NumericsError::Empty { op: "cross_entropy" });
        }
        let mean = total / count as f64;
        let value = Array2::from_vec(1, 1, vec![mean]).expect("1x1");
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        let value = Array2::from_vec(1, 1, vec![s]).expect("1x1");
        self.push(value, Op::Sum { a: a.0 })
    }

    /// Reverse pass from a scalar root. Visits each node exactly once in
    /// reverse arena (= reverse topological) order.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(NumericsError::NonScalarRoot {
                rows: rv.rows(),
                cols: rv.cols(),
            });
        }
        let mut grads: Vec<Option<Array2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_vec(1, 1, vec![1.0]).expect("1x1"));

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Array2, grads: &mut [Option<Array2>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                // C = A B: dA = dC B^T, dB = A^T dC
                let da = g.matmul_nt(&self.nodes[*b].value)?;
                let db = self.nodes[*a].value.matmul_tn(g)?;
                accum(grads, *a, da)?;
                accum(grads, *b, db)?;
            }
            Op::MatMulNT { a, b } => {
                // C = A B^T: dA = dC B, dB = dC^T A
                let da = g.matmul(&self.nodes[*b].value)?;
                let db = g.matmul_tn(&self.nodes[*a].value)?;
                accum(grads, *a, da)?;
                accum(grads, *b, db)?;
            }
            Op::Add { a, b } => {
                accum(grads, *a, g.clone())?;
                accum(grads, *b, g.clone())?;
            }
            Op::Sub { a, b } => {
                accum(grads, *a, g.clone())?;
                accum(grads, *b, g.scale(-1.0))?;
            }
            Op::Scale { a, c } => {
                accum(grads, *a, g.scale(*c))?;
            }
            Op::Hadamard { a, b } => {
                accum(grads, *a, g.hadamard(&self.nodes[*b].value)?)?;
                accum(grads, *b, g.hadamard(&self.nodes[*a].value)?)?;
            }
            Op::MulRowVec { a, g: gv } => {
                let av = &self.nodes[*a].value;
                let scv = &self.nodes[*gv].value;
                let mut da = g.clone();
                for i in 0..da.rows() {
                    for (x, &s) in da.row_mut(i).iter_mut().zip(scv.row(0)) {
                        *x *= s;
                    }
                }
                let mut dg = Array2::zeros(1, av.cols());
                for i in 0..av.rows() {
                    for j in 0..av.cols() {
                        dg.set(0, j, dg.at(0, j) + g.at(i, j) * av.at(i, j));
                    }
                }
                accum(grads, *a, da)?;
                accum(grads, *gv, dg)?;
            }
            Op::RmsNorm { a } => {
                let av = &self.nodes[*a].value;
                let n = av.cols() as f64;
                let mut da = Array2::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    let x = av.row(i);
                    let r = rms(x);
                    let s = dot(g.row(i), x);
                    let coef = s / (n * r * r * r);
                    for (j, d) in da.row_mut(i).iter_mut().enumerate() {
                        *d = g.at(i, j) / r - x[j] * coef;
                    }
                }
                accum(grads, *a, da)?;
            }
            Op::Gelu { a } => {
                let da = self.nodes[*a].value.map(gelu_deriv).hadamard(g)?;
                accum(grads, *a, da)?;
            }
            Op::SoftmaxRows { a } => {
                let y = &node.value;
                let mut da = Array2::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let s = dot(g.row(i), y.row(i));
                    for j in 0..y.cols() {
                        da.set(i, j, y.at(i, j) * (g.at(i, j) - s));
                    }
                }
                accum(grads, *a, da)?;
            }
            Op::CausalSoftmax { a } => {
                let y = &node.value;
                let mut da = Array2::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let s = dot(&g.row(i)[..=i], &y.row(i)[..=i]);
                    for j in 0..=i {
                        da.set(i, j, y.at(i, j) * (g.at(i, j) - s));
                    }
                }
                accum(grads, *a, da)?;
            }
            Op::Rope { a } => {
                let mut da = g.clone();
                rope_rows(&mut da, -1.0);
                accum(grads, *a, da)?;
            }
            Op::ColSlice { a, start, len } => {
                let av = &self.nodes[*a].value;
                let mut da = Array2::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    da.row_mut(i)[*start..*start + *len].copy_from_slice(g.row(i));
                }
                accum(grads, *a, da)?;
            }
            Op::ConcatCols { parts } => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.nodes[p].value.cols();
                    let mut dp = Array2::zeros(g.rows(), pc);
                    for i in 0..g.rows() {
                        dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + pc]);
                    }
                    accum(grads, p, dp)?;
                    off += pc;
                }
            }
            Op::EmbedRows { table, ids } => {
                let tv = &self.nodes[*table].value;
                let mut dt = Array2::zeros(tv.rows(), tv.cols());
                for (p, &id) in ids.iter().enumerate() {
                    let grow = g.row(p);
                    let trow = dt.row_mut(id);
                    for (t, &gv) in trow.iter_mut().zip(grow) {
                        *t += gv;
                    }
                }
                accum(grads, *table, dt)?;
            }
            Op::RowSelect { a, b, choose_a } => {
                // Sides no row selected receive no adjoint at all, so the
                // unselected branch is never traversed by backward.
                let shape = g.shape();
                if choose_a.iter().any(|&c| c) {
                    let mut da = Array2::zeros(shape.0, shape.1);
                    for (i, &ca) in choose_a.iter().enumerate() {
                        if ca {
                            da.row_mut(i).copy_from_slice(g.row(i));
                        }
                    }
                    accum(grads, *a, da)?;
                }
                if choose_a.iter().any(|&c| !c) {
                    let mut db = Array2::zeros(shape.0, shape.1);
                    for (i, &ca) in choose_a.iter().enumerate() {
                        if !ca {
                            db.row_mut(i).copy_from_slice(g.row(i));
                        }
                    }
                    accum(grads, *b, db)?;
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = &self.nodes[*logits].value;
                let count = targets.iter().filter(|t| t.is_some()).count() as f64;
                let scale = g.at(0, 0) / count;
                let mut dl = Array2::zeros(lv.rows(), lv.cols());
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        let mut probs = lv.row(i).to_vec();
                        softmax_in_place(&mut probs);
                        let drow = dl.row_mut(i);
                        for (j, p) in probs.iter().enumerate() {
                            drow[j] = scale * (p - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                }
                accum(grads, *logits, dl)?;
            }
            Op::Sum { a } => {
                let av = &self.nodes[*a].value;
                let mut da = Array2::zeros(av.rows(), av.cols());
                let gv = g.at(0, 0);
                for x in da.data_mut() {
                    *x = gv;
                }
                accum(grads, *a, da)?;
            }
        }
        Ok(())
    }
}

fn accum(grads: &mut [Option<Array2>], idx: usize, g: Array2) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign_scaled(&g, 1.0),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn rms(x: &[f64]) -> f64 {
    let m = x.iter().map(|&v| v * v).sum::<f64>() / x.len() as f64;
    (m + RMSNORM_EPS).sqrt()
}

fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in x {
        *v *= inv;
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Tanh-form Gaussian error linear unit.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Rotates each row's (2j, 2j+1) pairs by `dir * pos / ROPE_BASE^(2j/d)`.
/// `dir = 1` is the forward encoding, `dir = -1` its inverse (used for the
/// adjoint, since the rotation is orthogonal).
fn rope_rows(m: &mut Array2, dir: f64) {
    let half = m.cols() / 2;
    for pos in 0..m.rows() {
        let row = m.row_mut(pos);
        for j in 0..half {
            let theta = dir * pos as f64 / ROPE_BASE.powf(2.0 * j as f64 / (2 * half) as f64);
            let (sin, cos) = theta.sin_cos();
            let (x0, x1) = (row[2 * j], row[2 * j + 1]);
            row[2 * j] = x0 * cos - x1 * sin;
            row[2 * j + 1] = x0 * sin + x1 * cos;
        }
    }
}
