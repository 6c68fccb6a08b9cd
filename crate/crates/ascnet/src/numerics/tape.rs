//! Reverse-mode differentiation over [`Matrix2`] values.
//!
//! A [`Tape`] records one forward computation as a flat list of nodes, each
//! holding its value and the operation that produced it. Parents always
//! precede children, so [`Tape::backward`] is a single reverse sweep that
//! accumulates `dL/dnode` into per-node gradient buffers. Values saved for
//! the backward pass (dropout masks, batch statistics, row norms) live
//! inside the recording node.

use rand::Rng;

use super::{Matrix2, Mode};
use crate::error::AscError;
use crate::Result;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Running batch-normalization statistics, one entry per feature column.
/// Owned by the model, read in `Eval`, updated in `Train`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(cols: usize) -> Self {
        BnStats {
            mean: vec![0.0; cols],
            var: vec![1.0; cols],
        }
    }
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Broadcast-add a 1 x C bias row to every row of the input.
    AddRowBias(NodeId, NodeId),
    Relu(NodeId),
    Transpose(NodeId),
    /// Identity forward, no gradient backward; the parent link is dropped
    /// because nothing flows to it.
    Detach,
    /// Mask entries are pre-scaled: 0 for dropped, 1/(1-p) for kept.
    Dropout { input: NodeId, mask: Vec<f64> },
    /// Saved value of the node itself is the softmax output.
    SoftmaxRows(NodeId),
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Matrix2,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    /// Pairwise cosine similarity of the input's rows. `row_norms` saves the
    /// forward norms; rows below the zero guard get similarity 0 everywhere.
    CosineSim {
        input: NodeId,
        row_norms: Vec<f64>,
        stop_grad: bool,
    },
    FrobeniusNorm(NodeId),
    /// Sum over rows i of -ln(probs[i, labels[i]]), as a 1 x 1 scalar.
    CrossEntropySum { probs: NodeId, labels: Vec<usize> },
    ConcatRows(Vec<NodeId>),
    SliceRows { input: NodeId, start: usize },
}

struct Node {
    value: Matrix2,
    op: Op,
}

/// Norm threshold below which a feature row counts as zero for cosine
/// similarity.
pub const COSINE_ZERO_GUARD: f64 = 1e-12;

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

    pub fn value(&self, id: NodeId) -> &Matrix2 {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix2, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers an input or parameter value.
    pub fn leaf(&mut self, value: Matrix2) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(a).shape();
        if self.value(bias).shape() != (1, cols) {
            return Err(AscError::Shape {
                op: "add_row_bias",
                lhs: (rows, cols),
                rhs: self.value(bias).shape(),
            });
        }
        let mut value = self.value(a).clone();
        for i in 0..rows {
            for j in 0..cols {
                let v = value.get(i, j) + self.value(bias).get(0, j);
                value.set(i, j, v);
            }
        }
        Ok(self.push(value, Op::AddRowBias(a, bias)))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).relu();
        self.push(value, Op::Relu(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).clone();
        self.push(value, Op::Detach)
    }

    /// Inverted dropout: in `Train`, zeroes each entry with probability `p`
    /// and scales survivors by 1/(1-p); in `Eval` (or at p = 0) it is the
    /// identity and the input node is returned unchanged.
    pub fn dropout<R: Rng>(
        &mut self,
        a: NodeId,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(AscError::Param(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let mut value = self.value(a).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(value, Op::Dropout { input: a, mask }))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).softmax_rows();
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Column-wise batch normalization over all rows of the input.
    ///
    /// In `Train`, normalizes by batch statistics and folds them into
    /// `stats` with `momentum` (`running = momentum * running + (1 -
    /// momentum) * batch`). In `Eval`, normalizes by `stats` untouched.
    pub fn batch_norm<'s>(
        &mut self,
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: impl Into<BnStatsRef<'s>>,
        mode: Mode,
        eps: f64,
        momentum: f64,
    ) -> Result<NodeId> {
        let stats = stats.into();
        let (rows, cols) = self.value(a).shape();
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.value(id).shape() != (1, cols) {
                return Err(AscError::Param(format!(
                    "batch_norm {name} shape {:?} does not match {cols} columns",
                    self.value(id).shape()
                )));
            }
        }
        let (mean, var) = match (&stats, mode) {
            (_, Mode::Train) => {
                let x = self.value(a);
                let mut mean = vec![0.0; cols];
                let mut var = vec![0.0; cols];
                for i in 0..rows {
                    for (j, m) in mean.iter_mut().enumerate() {
                        *m += x.get(i, j);
                    }
                }
                for m in mean.iter_mut() {
                    *m /= rows as f64;
                }
                for i in 0..rows {
                    for (j, v) in var.iter_mut().enumerate() {
                        let d = x.get(i, j) - mean[j];
                        *v += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= rows as f64;
                }
                (mean, var)
            }
            (BnStatsRef::Mut(s), Mode::Eval) => (s.mean.clone(), s.var.clone()),
            (BnStatsRef::Ref(s), Mode::Eval) => (s.mean.clone(), s.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = Matrix2::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                xhat.set(i, j, (self.value(a).get(i, j) - mean[j]) * inv_std[j]);
            }
        }
        let mut value = Matrix2::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                value.set(
                    i,
                    j,
                    self.value(gamma).get(0, j) * xhat.get(i, j) + self.value(beta).get(0, j),
                );
            }
        }

        if mode == Mode::Train {
            match stats {
                BnStatsRef::Mut(s) => {
                    for j in 0..cols {
                        s.mean[j] = momentum * s.mean[j] + (1.0 - momentum) * mean[j];
                        s.var[j] = momentum * s.var[j] + (1.0 - momentum) * var[j];
                    }
                }
                BnStatsRef::Ref(_) => {
                    return Err(AscError::Param(
                        "batch_norm in Train mode needs mutable running statistics".into(),
                    ))
                }
            }
        }

        Ok(self.push(
            value,
            Op::BatchNorm {
                input: a,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        ))
    }

    /// N x N matrix of pairwise cosine similarities between the rows of an
    /// N x D input. The diagonal is exactly 1 for rows above the zero
    /// guard; any pair involving a near-zero row gets similarity 0.
    pub fn cosine_similarity(&mut self, f: NodeId, stop_grad: bool) -> NodeId {
        let x = self.value(f);
        let n = x.rows();
        let row_norms: Vec<f64> = (0..n).map(|i| x.row_norm(i)).collect();
        let mut s = Matrix2::zeros(n, n);
        for i in 0..n {
            if row_norms[i] < COSINE_ZERO_GUARD {
                continue;
            }
            s.set(i, i, 1.0);
            for j in 0..i {
                if row_norms[j] < COSINE_ZERO_GUARD {
                    continue;
                }
                let dot: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
                let v = dot / (row_norms[i] * row_norms[j]);
                s.set(i, j, v);
                s.set(j, i, v);
            }
        }
        self.push(
            s,
            Op::CosineSim {
                input: f,
                row_norms,
                stop_grad,
            },
        )
    }

    pub fn frobenius_norm(&mut self, a: NodeId) -> NodeId {
        let norm = self.value(a).frobenius_norm();
        self.push(
            Matrix2::from_vec(1, 1, vec![norm]).unwrap(),
            Op::FrobeniusNorm(a),
        )
    }

    /// Sum over rows of the negative log-probability of each row's label.
    /// `probs` must hold probability rows (a `softmax_rows` output).
    pub fn cross_entropy_sum(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let p = self.value(probs);
        if labels.len() != p.rows() {
            return Err(AscError::Param(format!(
                "{} labels for {} probability rows",
                labels.len(),
                p.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= p.cols()) {
            return Err(AscError::Param(format!(
                "label {bad} out of range for {} classes",
                p.cols()
            )));
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -p.get(i, l).ln())
            .sum();
        Ok(self.push(
            Matrix2::from_vec(1, 1, vec![total]).unwrap(),
            Op::CrossEntropySum {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix2> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix2::concat_rows(&values)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let value = self.value(a).slice_rows(start, len)?;
        Ok(self.push(value, Op::SliceRows { input: a, start }))
    }

    /// Reverse sweep from a scalar root. Returns the per-node gradient
    /// buffers, indexable through [`Tape::grad_of`].
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.shape() != (1, 1) {
            return Err(AscError::Param(format!(
                "backward root must be 1x1, got {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[root.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let (head, tail) = grads.split_at_mut(i);
            let g = &tail[0];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    // dL/da = g . b^T ; dL/db = a^T . g
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (ar, ac) = av.shape();
                    let bc = bv.cols();
                    let ga = &mut head[a.0];
                    for r in 0..ar {
                        for k in 0..ac {
                            let mut acc = 0.0;
                            for c in 0..bc {
                                acc += g[r * bc + c] * bv.get(k, c);
                            }
                            ga[r * ac + k] += acc;
                        }
                    }
                    let gb = &mut head[b.0];
                    for k in 0..ac {
                        for c in 0..bc {
                            let mut acc = 0.0;
                            for r in 0..ar {
                                acc += av.get(r, k) * g[r * bc + c];
                            }
                            gb[k * bc + c] += acc;
                        }
                    }
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for (idx, &gv) in g.iter().enumerate() {
                        head[a.0][idx] += gv * bv.data()[idx];
                    }
                    for (idx, &gv) in g.iter().enumerate() {
                        head[b.0][idx] += gv * av.data()[idx];
                    }
                }
                Op::Add(a, b) => {
                    for (idx, &gv) in g.iter().enumerate() {
                        head[a.0][idx] += gv;
                    }
                    for (idx, &gv) in g.iter().enumerate() {
                        head[b.0][idx] += gv;
                    }
                }
                Op::Sub(a, b) => {
                    for (idx, &gv) in g.iter().enumerate() {
                        head[a.0][idx] += gv;
                    }
                    for (idx, &gv) in g.iter().enumerate() {
                        head[b.0][idx] -= gv;
                    }
                }
                Op::Scale(a, c) => {
                    for (idx, &gv) in g.iter().enumerate() {
                        head[a.0][idx] += gv * c;
                    }
                }
                Op::AddRowBias(a, bias) => {
                    let cols = self.nodes[bias.0].value.cols();
                    for (idx, &gv) in g.iter().enumerate() {
                        head[a.0][idx] += gv;
                        head[bias.0][idx % cols] += gv;
                    }
                }
                Op::Relu(a) => {
                    // Subgradient at exactly 0 is 0.
                    let av = &self.nodes[a.0].value;
                    for (idx, &gv) in g.iter().enumerate() {
                        if av.data()[idx] > 0.0 {
                            head[a.0][idx] += gv;
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (rows, cols) = self.nodes[i].value.shape();
                    for r in 0..rows {
                        for c in 0..cols {
                            head[a.0][c * rows + r] += g[r * cols + c];
                        }
                    }
                }
                Op::Detach => {}
                Op::Dropout { input, mask } => {
                    for (idx, (&gv, &m)) in g.iter().zip(mask).enumerate() {
                        head[input.0][idx] += gv * m;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let p = &self.nodes[i].value;
                    let (rows, cols) = p.shape();
                    for r in 0..rows {
                        let prow = p.row(r);
                        let grow = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = prow.iter().zip(grow).map(|(pv, gv)| pv * gv).sum();
                        for c in 0..cols {
                            head[a.0][r * cols + c] += prow[c] * (grow[c] - dot);
                        }
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (rows, cols) = xhat.shape();
                    let gammav = &self.nodes[gamma.0].value;
                    for r in 0..rows {
                        for c in 0..cols {
                            let gv = g[r * cols + c];
                            head[gamma.0][c] += gv * xhat.get(r, c);
                            head[beta.0][c] += gv;
                        }
                    }
                    if *batch_stats {
                        // Standard reduced form of the batch-statistics
                        // gradient, per column.
                        let nr = rows as f64;
                        for c in 0..cols {
                            let mut sum_dxhat = 0.0;
                            let mut sum_dxhat_xhat = 0.0;
                            for r in 0..rows {
                                let dxhat = g[r * cols + c] * gammav.get(0, c);
                                sum_dxhat += dxhat;
                                sum_dxhat_xhat += dxhat * xhat.get(r, c);
                            }
                            for r in 0..rows {
                                let dxhat = g[r * cols + c] * gammav.get(0, c);
                                head[input.0][r * cols + c] += inv_std[c]
                                    * (dxhat
                                        - sum_dxhat / nr
                                        - xhat.get(r, c) * sum_dxhat_xhat / nr);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for c in 0..cols {
                                head[input.0][r * cols + c] +=
                                    g[r * cols + c] * gammav.get(0, c) * inv_std[c];
                            }
                        }
                    }
                }
                Op::CosineSim {
                    input,
                    row_norms,
                    stop_grad,
                } => {
                    if *stop_grad {
                        continue;
                    }
                    let f = &self.nodes[input.0].value;
                    let s = &self.nodes[i].value;
                    let (n, d) = f.shape();
                    // Each off-diagonal entry depends on both of its rows:
                    // d s_rc / d f_r = f_c/(|f_r||f_c|) - s_rc f_r/|f_r|^2,
                    // and symmetrically for f_c. Diagonal entries are
                    // constant 1, gradient zero.
                    for r in 0..n {
                        for c in 0..n {
                            if r == c {
                                continue;
                            }
                            let gv = g[r * n + c];
                            if gv == 0.0 {
                                continue;
                            }
                            if row_norms[r] < COSINE_ZERO_GUARD
                                || row_norms[c] < COSINE_ZERO_GUARD
                            {
                                continue;
                            }
                            let inv_prod = 1.0 / (row_norms[r] * row_norms[c]);
                            let inv_r2 = 1.0 / (row_norms[r] * row_norms[r]);
                            let inv_c2 = 1.0 / (row_norms[c] * row_norms[c]);
                            let sv = s.get(r, c);
                            for k in 0..d {
                                head[input.0][r * d + k] +=
                                    gv * (f.get(c, k) * inv_prod - sv * f.get(r, k) * inv_r2);
                                head[input.0][c * d + k] +=
                                    gv * (f.get(r, k) * inv_prod - sv * f.get(c, k) * inv_c2);
                            }
                        }
                    }
                }
                Op::FrobeniusNorm(a) => {
                    let norm = self.nodes[i].value.get(0, 0);
                    if norm > 0.0 {
                        let scale = g[0] / norm;
                        let av = &self.nodes[a.0].value;
                        for (idx, &x) in av.data().iter().enumerate() {
                            head[a.0][idx] += scale * x;
                        }
                    }
                }
                Op::CrossEntropySum { probs, labels } => {
                    let p = &self.nodes[probs.0].value;
                    let cols = p.cols();
                    for (r, &l) in labels.iter().enumerate() {
                        head[probs.0][r * cols + l] -= g[0] / p.get(r, l);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for part in parts {
                        let len = self.nodes[part.0].value.len();
                        for (idx, &gv) in g[offset..offset + len].iter().enumerate() {
                            head[part.0][idx] += gv;
                        }
                        offset += len;
                    }
                }
                Op::SliceRows { input, start } => {
                    let cols = self.nodes[input.0].value.cols();
                    let offset = start * cols;
                    for (idx, &gv) in g.iter().enumerate() {
                        head[input.0][offset + idx] += gv;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Mutable-or-shared view of running BN statistics; `Train` requires the
/// mutable form.
pub enum BnStatsRef<'a> {
    Mut(&'a mut BnStats),
    Ref(&'a BnStats),
}

impl<'a> From<&'a mut BnStats> for BnStatsRef<'a> {
    fn from(s: &'a mut BnStats) -> Self {
        BnStatsRef::Mut(s)
    }
}

impl<'a> From<&'a BnStats> for BnStatsRef<'a> {
    fn from(s: &'a BnStats) -> Self {
        BnStatsRef::Ref(s)
    }
}

/// Gradient buffers produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn of(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn matrix_of(&self, tape: &Tape, id: NodeId) -> Matrix2 {
        let (rows, cols) = tape.value(id).shape();
        Matrix2::from_vec(rows, cols, self.grads[id.0].clone()).unwrap()
    }
}
