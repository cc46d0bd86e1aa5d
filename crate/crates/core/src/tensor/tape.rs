use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels;
use super::{Real, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MaskedFill {
        x: Var,
        mask: Vec<bool>,
    },
    Dropout {
        x: Var,
        scale: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Wengert list of primitive ops. Nodes are appended in execution order, so
/// the list is always topologically sorted. With tracking disabled the same
/// values are computed but nothing is kept for the backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    tracking: bool,
}

/// Gradients of a scalar loss with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `var`; `None` only for nodes that were never tracked.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn require_matrix(op: &'static str, shape: &[usize]) -> Result<(usize, usize), TensorError> {
    match *shape {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
        }),
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            tracking: true,
        }
    }

    /// A tape that computes values only.
    pub fn untracked() -> Self {
        Self {
            nodes: Vec::new(),
            tracking: false,
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>, parents: &[Var]) -> Result<Var, TensorError> {
        check_finite(op_name, &data)?;
        let requires_grad = self.tracking && parents.iter().any(|&p| self.needs(p));
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input. `requires_grad` marks a trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.tracking,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (n, k) = require_matrix("matmul", self.shape(a))?;
        let (k2, m) = require_matrix("matmul", self.shape(b))?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); n * m];
        kernels::matmul(self.data(a), self.data(b), n, k, m, &mut out);
        self.push("matmul", vec![n, m], out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (n, m) = require_matrix("transpose", self.shape(a))?;
        let mut out = vec![T::zero(); n * m];
        kernels::transpose(self.data(a), n, m, &mut out);
        self.push("transpose", vec![m, n], out, Op::Transpose(a), &[a])
    }

    /// Elementwise sum. `b` may also be a vector broadcast across the rows
    /// of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b);
        let da = self.data(a);
        let db = self.data(b);
        let out: Vec<T> = if sa.as_slice() == sb {
            da.iter().zip(db).map(|(&x, &y)| x + y).collect()
        } else if sb.len() == 1 && sa.len() == 2 && sb[0] == sa[1] {
            da.chunks(sa[1])
                .flat_map(|row| row.iter().zip(db).map(|(&x, &y)| x + y))
                .collect()
        } else {
            return Err(mismatch("add", &sa, sb));
        };
        self.push("add", sa, out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", shape, out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, TensorError> {
        let out = self.data(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push("scale", shape, out, Op::Scale(a, c), &[a])
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let cols = self.value(a).cols();
        let mut out = self.data(a).to_vec();
        out.chunks_mut(cols).for_each(kernels::softmax_row);
        let shape = self.shape(a).to_vec();
        self.push("softmax", shape, out, Op::Softmax(a), &[a])
    }

    /// Row-wise layer normalisation with gain and bias vectors.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, TensorError> {
        let d = self.value(x).cols();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let rows = self.value(x).rows();
        let mut xhat = vec![T::zero(); rows * d];
        let mut out = vec![T::zero(); rows * d];
        let mut rstd = Vec::with_capacity(rows);
        {
            let (xd, g, b) = (self.data(x), self.data(gain), self.data(bias));
            for r in 0..rows {
                let span = r * d..(r + 1) * d;
                rstd.push(kernels::layer_norm_row(
                    &xd[span.clone()],
                    g,
                    b,
                    eps,
                    &mut xhat[span.clone()],
                    &mut out[span],
                ));
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.data(a).iter().map(|&x| kernels::gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push("gelu", shape, out, Op::Gelu(a), &[a])
    }

    /// Gathers rows of `table[vocab, d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (vocab, d) = require_matrix("embedding", self.shape(table))?;
        if ids.is_empty() {
            return Err(TensorError::Invalid {
                op: "embedding",
                reason: "empty id list",
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: vocab,
                });
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        self.push(
            "embedding",
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Replaces entries where `mask` is true with `value`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: T) -> Result<Var, TensorError> {
        if mask.len() != self.value(a).len() {
            return Err(mismatch("masked_fill", self.shape(a), &[mask.len()]));
        }
        let out = self
            .data(a)
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(
            "masked_fill",
            shape,
            out,
            Op::MaskedFill {
                x: a,
                mask: mask.to_vec(),
            },
            &[a],
        )
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. Callers only
    /// use it in train mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid {
                op: "dropout",
                reason: "rate must lie in [0, 1)",
            });
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let scale: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self.data(a).iter().zip(&scale).map(|(&x, &s)| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push("dropout", shape, out, Op::Dropout { x: a, scale }, &[a])
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Invalid {
            op: "concat_cols",
            reason: "no inputs",
        })?;
        let (rows, _) = require_matrix("concat_cols", self.shape(first))?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = require_matrix("concat_cols", self.shape(p))?;
            if r != rows {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push("concat_cols", vec![rows, total], out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (rows, cols) = require_matrix("slice_cols", self.shape(a))?;
        if start >= end || end > cols {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: end,
                bound: cols,
            });
        }
        let data = self.data(a);
        let out = (0..rows)
            .flat_map(|r| data[r * cols + start..r * cols + end].iter().copied())
            .collect();
        self.push("slice_cols", vec![rows, end - start], out, Op::SliceCols { x: a, start }, &[a])
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (rows, cols) = require_matrix("slice_rows", self.shape(a))?;
        if start >= end || end > rows {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: end,
                bound: rows,
            });
        }
        let out = self.data(a)[start * cols..end * cols].to_vec();
        self.push("slice_rows", vec![end - start, cols], out, Op::SliceRows { x: a, start }, &[a])
    }

    /// Mean softmax cross-entropy over the rows that carry a target. Rows
    /// with `None` contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, TensorError> {
        let k = self.value(logits).cols();
        let rows = self.value(logits).rows();
        if targets.len() != rows {
            return Err(mismatch("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if k < 2 {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                reason: "need at least two classes",
            });
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                reason: "no target rows",
            });
        }
        let mut probs = self.data(logits).to_vec();
        let mut total = T::zero();
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= k {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    bound: k,
                });
            }
            let row = self.value(logits).row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[t];
            kernels::softmax_row(&mut probs[r * k..(r + 1) * k]);
        }
        let loss = total / T::of(count as f64);
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        )
    }

    /// `-log softmax(logits)[target]` for a single vector of logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, TensorError> {
        self.cross_entropy(logits, &[Some(target)])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.data(a).iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = T::of(self.value(a).len() as f64);
        let s = self.data(a).iter().copied().sum::<T>() / n;
        self.push("mean", vec![1], vec![s], Op::Mean(a), &[a])
    }

    /// Reverse pass from a scalar `loss`. Every tracked leaf receives a
    /// gradient; leaves with no path to the loss receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(node.value.shape().to_vec()));
        }
        if !node.requires_grad {
            return Err(TensorError::Detached);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let out = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| {
                if !n.requires_grad {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![T::zero(); n.value.len()]);
                Some(Tensor::from_parts(n.value.shape().to_vec(), data))
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.needs(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (n, k) = (self.value(a).rows(), self.value(a).cols());
                let m = self.value(b).cols();
                if let Some(ga) = self.acc(grads, a) {
                    // dA = G · Bᵀ
                    let mut bt = vec![T::zero(); k * m];
                    kernels::transpose(self.data(b), k, m, &mut bt);
                    let mut tmp = vec![T::zero(); n * k];
                    kernels::matmul(g, &bt, n, m, k, &mut tmp);
                    add_into(ga, &tmp);
                }
                if let Some(gb) = self.acc(grads, b) {
                    // dB = Aᵀ · G
                    kernels::matmul_at_acc(self.data(a), g, n, k, m, gb);
                }
            }
            &Op::Transpose(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    let (n, m) = (self.value(a).rows(), self.value(a).cols());
                    let mut tmp = vec![T::zero(); n * m];
                    kernels::transpose(g, m, n, &mut tmp);
                    add_into(ga, &tmp);
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, a) {
                    add_into(ga, g);
                }
                let same = self.shape(a) == self.shape(b);
                if let Some(gb) = self.acc(grads, b) {
                    if same {
                        add_into(gb, g);
                    } else {
                        let cols = gb.len();
                        for row in g.chunks(cols) {
                            add_into(gb, row);
                        }
                    }
                }
            }
            &Op::Mul(a, b) => {
                if let Some(ga) = self.acc(grads, a) {
                    for ((d, &gi), &bv) in ga.iter_mut().zip(g).zip(self.data(b)) {
                        *d += gi * bv;
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    for ((d, &gi), &av) in gb.iter_mut().zip(g).zip(self.data(a)) {
                        *d += gi * av;
                    }
                }
            }
            &Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, a) {
                    for (d, &gi) in ga.iter_mut().zip(g) {
                        *d += gi * c;
                    }
                }
            }
            &Op::Softmax(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    let y = node.value.data();
                    let cols = node.value.cols();
                    for ((gr, yr), dr) in g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols)) {
                        let dot: T = gr.iter().zip(yr).map(|(&gi, &yi)| gi * yi).sum();
                        for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let gain_v = self.data(*gain);
                if let Some(gx) = self.acc(grads, *x) {
                    let df = T::of(d as f64);
                    for (r, &rs) in rstd.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let gr = &g[span.clone()];
                        let xh = &xhat[span.clone()];
                        let mut sum_dxh = T::zero();
                        let mut sum_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gain_v[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let out = &mut gx[span];
                        for j in 0..d {
                            let dxh = gr[j] * gain_v[j];
                            out[j] += rs / df * (df * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                        }
                    }
                }
                if let Some(gg) = self.acc(grads, *gain) {
                    for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, &gi), &xi) in gg.iter_mut().zip(gr).zip(xr) {
                            *o += gi * xi;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                }
            }
            &Op::Gelu(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    for ((d, &gi), &xv) in ga.iter_mut().zip(g).zip(self.data(a)) {
                        *d += gi * kernels::gelu_grad(xv);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(gt) = self.acc(grads, *table) {
                    let d = node.value.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::MaskedFill { x, mask } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((d, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                        if !m {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Dropout { x, scale } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((d, &gi), &s) in gx.iter_mut().zip(g).zip(scale) {
                        *d += gi * s;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for (r, row) in g.chunks(total).enumerate() {
                            add_into(&mut gp[r * c..(r + 1) * c], &row[offset..offset + c]);
                        }
                    }
                    offset += c;
                }
            }
            &Op::SliceCols { x, start } => {
                let cols = self.value(x).cols();
                let w = node.value.cols();
                if let Some(gx) = self.acc(grads, x) {
                    for (r, row) in g.chunks(w).enumerate() {
                        add_into(&mut gx[r * cols + start..r * cols + start + w], row);
                    }
                }
            }
            &Op::SliceRows { x, start } => {
                let cols = node.value.cols();
                if let Some(gx) = self.acc(grads, x) {
                    add_into(&mut gx[start * cols..start * cols + g.len()], g);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if let Some(gl) = self.acc(grads, *logits) {
                    let k = self.value(*logits).cols();
                    let scale = g[0] / T::of(*count as f64);
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..k {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            gl[r * k + j] += scale * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    let n = T::of(ga.len() as f64);
                    ga.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
        }
    }
}
