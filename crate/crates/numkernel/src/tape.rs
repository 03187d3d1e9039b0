//! Dynamic reverse-mode tape.
//!
//! Every forward operation appends a node holding its output value and enough
//! context to run its vector-Jacobian product. The graph is rebuilt for every
//! forward pass, so data-dependent masking needs no special handling.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{KernelError, Result};
use crate::tensor::{dot, gemm_nt, gemm_tn, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry shared by the fused multi-head kernels.
///
/// Activations are stored as `[batch·len × heads·head_dim]`: sample `b`, step
/// `j` lives in row `b·len + j`, head `h` owns columns `h·head_dim..(h+1)·head_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub batch: usize,
    pub len: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl HeadLayout {
    pub fn rows(&self) -> usize {
        self.batch * self.len
    }

    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Number of entries in a `[batch × heads × len × len]` mask.
    pub fn mask_len(&self) -> usize {
        self.batch * self.heads * self.len * self.len
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Transpose(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        input: Var,
        rows: Vec<usize>,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    MaskedSoftmaxRows(Var),
    LayerNormRows {
        input: Var,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    MaskedAttention {
        q: Var,
        k: Var,
        v: Var,
        layout: HeadLayout,
        weights: Vec<f64>,
    },
    HeadPool {
        input: Var,
        layout: HeadLayout,
        weights: Arc<[f64]>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulRow(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _) | Transpose(a) | Relu(a) | Tanh(a) | Sigmoid(a) | SoftmaxRows(a)
            | MaskedSoftmaxRows(a) | Sum(a) | Mean(a) => vec![*a],
            Concat { parts, .. } => parts.clone(),
            Slice { input, .. }
            | GatherRows { input, .. }
            | LayerNormRows { input, .. }
            | HeadPool { input, .. } => vec![*input],
            MaskedAttention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Order in which [`Tape::backward_with`] visits nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Traversal {
    /// Reverse recording order.
    ReverseTape,
    /// Kahn-style topological order driven by consumer counts from the loss.
    ConsumerCount,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` if the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Number of nodes whose vector-Jacobian product was evaluated.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    masks: Vec<Option<Arc<[bool]>>>,
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, None)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    /// Row-stochastic matrix computed by a [`Tape::masked_attention`] node,
    /// laid out as `[batch × heads × len × len]`.
    pub fn attention_weights(&self, var: Var) -> Option<&[f64]> {
        match &self.nodes[var.0].op {
            Op::MaskedAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, mask: Option<Arc<[bool]>>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.masks.push(mask);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[var.0].value.dims2(op)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(KernelError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg, None))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg, None))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * s);
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Scale(a, s), rg, None))
    }

    fn row_broadcast(&mut self, a: Var, row: Var, name: &'static str) -> Result<(usize, usize)> {
        let (m, n) = self.dims(a, name)?;
        let (rr, rc) = self.dims(row, name)?;
        if rr != 1 || rc != n {
            return Err(KernelError::ShapeMismatch {
                op: name,
                lhs: vec![m, n],
                rhs: vec![rr, rc],
            });
        }
        Ok((m, n))
    }

    /// `a[m×n] + row[1×n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast(a, row, "add_row")?;
        let r = self.value(row).data();
        let value = Tensor::from_fn(m, n, |i, j| self.value(a).data()[i * n + j] + r[j]);
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg, None))
    }

    /// `a[m×n] ⊙ row[1×n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast(a, row, "mul_row")?;
        let r = self.value(row).data();
        let value = Tensor::from_fn(m, n, |i, j| self.value(a).data()[i * n + j] * r[j]);
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(value, Op::MulRow(a, row), rg, None))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg, None))
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(KernelError::InvalidArgument {
                op: "concat",
                msg: format!("{} parts along axis {}", parts.len(), axis),
            });
        }
        let (r0, c0) = self.dims(parts[0], "concat")?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p, "concat")?;
            let fixed_ok = if axis == 0 { c == c0 } else { r == r0 };
            if !fixed_ok {
                return Err(KernelError::ShapeMismatch {
                    op: "concat",
                    lhs: vec![r0, c0],
                    rhs: vec![r, c],
                });
            }
            total += if axis == 0 { r } else { c };
        }
        let value = if axis == 0 {
            let mut data = Vec::with_capacity(total * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::matrix(total, c0, data)?
        } else {
            let mut data = Vec::with_capacity(r0 * total);
            for r in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::matrix(r0, total, data)?
        };
        let rg = self.any_grad(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
            None,
        ))
    }

    /// Contiguous slice `start..start+count` along `axis` of a 2-D tensor.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, count: usize) -> Result<Var> {
        let (m, n) = self.dims(a, "slice")?;
        let extent = match axis {
            0 => m,
            1 => n,
            _ => {
                return Err(KernelError::InvalidArgument {
                    op: "slice",
                    msg: format!("axis {axis}"),
                })
            }
        };
        if start + count > extent || count == 0 {
            return Err(KernelError::InvalidArgument {
                op: "slice",
                msg: format!("range {}..{} out of extent {}", start, start + count, extent),
            });
        }
        let src = self.value(a);
        let value = if axis == 0 {
            Tensor::matrix(count, n, src.data()[start * n..(start + count) * n].to_vec())?
        } else {
            Tensor::from_fn(m, count, |i, j| src.data()[i * n + start + j])
        };
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Slice { input: a, axis, start }, rg, None))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a, "gather_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(KernelError::InvalidArgument {
                op: "gather_rows",
                msg: format!("row {bad} out of {m}"),
            });
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(src.row(r));
        }
        let value = Tensor::matrix(rows.len(), n, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::GatherRows {
                input: a,
                rows: rows.to_vec(),
            },
            rg,
            None,
        ))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg, None)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "softmax_rows")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            softmax_into(&src[r * n..(r + 1) * n], None, &mut out[r * n..(r + 1) * n]);
        }
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg, None))
    }

    /// Row-wise softmax where entries with `mask == false` are treated as −∞.
    ///
    /// Every row must admit at least one entry.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Arc<[bool]>) -> Result<Var> {
        let (m, n) = self.dims(a, "masked_softmax_rows")?;
        if mask.len() != m * n {
            return Err(KernelError::ShapeMismatch {
                op: "masked_softmax_rows",
                lhs: vec![m, n],
                rhs: vec![mask.len()],
            });
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row_mask = &mask[r * n..(r + 1) * n];
            if !row_mask.iter().any(|&b| b) {
                return Err(KernelError::InvalidArgument {
                    op: "masked_softmax_rows",
                    msg: format!("row {r} admits no entries"),
                });
            }
            softmax_into(&src[r * n..(r + 1) * n], Some(row_mask), &mut out[r * n..(r + 1) * n]);
        }
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::MaskedSoftmaxRows(a), rg, Some(mask)))
    }

    /// Row-wise standardization `(x − mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims(a, "layer_norm_rows")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, x) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            inv_std.push(is);
        }
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::LayerNormRows { input: a, inv_std }, rg, None))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg, None)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.numel() as f64);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Mean(a), rg, None)
    }

    /// Scaled dot-product attention for every (sample, head) pair at once.
    ///
    /// `q`, `k`, `v` are `[batch·len × heads·head_dim]`. `mask` is
    /// `[batch × heads × len × len]`; a `false` entry maps the score to −∞
    /// before the softmax, so the corresponding key contributes nothing.
    /// Scores are scaled by `1/√head_dim`. Every mask row must admit at least
    /// one key. Output has the same layout as `q` (heads concatenated).
    pub fn masked_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: HeadLayout,
        mask: Arc<[bool]>,
    ) -> Result<Var> {
        let expect = [layout.rows(), layout.width()];
        for var in [q, k, v] {
            let shape = self.value(var).shape();
            if shape != expect {
                return Err(KernelError::ShapeMismatch {
                    op: "masked_attention",
                    lhs: expect.to_vec(),
                    rhs: shape.to_vec(),
                });
            }
        }
        if mask.len() != layout.mask_len() {
            return Err(KernelError::ShapeMismatch {
                op: "masked_attention",
                lhs: vec![layout.batch, layout.heads, layout.len, layout.len],
                rhs: vec![mask.len()],
            });
        }
        let HeadLayout {
            batch,
            len,
            heads,
            head_dim,
        } = layout;
        let width = layout.width();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut weights = vec![0.0; layout.mask_len()];
        let mut out = vec![0.0; layout.rows() * width];
        let mut scores = vec![0.0; len];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * head_dim;
                for j in 0..len {
                    let base = ((b * heads + h) * len + j) * len;
                    let row_mask = &mask[base..base + len];
                    if !row_mask.iter().any(|&x| x) {
                        return Err(KernelError::InvalidArgument {
                            op: "masked_attention",
                            msg: format!("sample {b}, head {h}, query {j} admits no keys"),
                        });
                    }
                    let qr = &qd[(b * len + j) * width + col..][..head_dim];
                    for l in 0..len {
                        if row_mask[l] {
                            let kr = &kd[(b * len + l) * width + col..][..head_dim];
                            scores[l] = dot(qr, kr) * scale;
                        }
                    }
                    let w = &mut weights[base..base + len];
                    softmax_into(&scores, Some(row_mask), w);
                    let o = &mut out[(b * len + j) * width + col..][..head_dim];
                    for l in 0..len {
                        if row_mask[l] {
                            let vr = &vd[(b * len + l) * width + col..][..head_dim];
                            for (oc, vc) in o.iter_mut().zip(vr) {
                                *oc += w[l] * vc;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::matrix(layout.rows(), width, out)?;
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(
            value,
            Op::MaskedAttention {
                q,
                k,
                v,
                layout,
                weights,
            },
            rg,
            Some(mask),
        ))
    }

    /// Per-(sample, head) weighted sum over steps.
    ///
    /// `input` is `[batch·len × heads·head_dim]`, `weights` is
    /// `[batch × heads × len]` (constant). Output is `[batch × heads·head_dim]`.
    pub fn head_pool(&mut self, input: Var, layout: HeadLayout, weights: Arc<[f64]>) -> Result<Var> {
        let expect = [layout.rows(), layout.width()];
        if self.value(input).shape() != expect || weights.len() != layout.batch * layout.heads * layout.len {
            return Err(KernelError::ShapeMismatch {
                op: "head_pool",
                lhs: expect.to_vec(),
                rhs: self.value(input).shape().to_vec(),
            });
        }
        let HeadLayout {
            batch,
            len,
            heads,
            head_dim,
        } = layout;
        let width = layout.width();
        let src = self.value(input).data();
        let mut out = vec![0.0; batch * width];
        for b in 0..batch {
            for h in 0..heads {
                let o = &mut out[b * width + h * head_dim..][..head_dim];
                for j in 0..len {
                    let w = weights[(b * heads + h) * len + j];
                    let r = &src[(b * len + j) * width + h * head_dim..][..head_dim];
                    for (oc, rc) in o.iter_mut().zip(r) {
                        *oc += w * rc;
                    }
                }
            }
        }
        let value = Tensor::matrix(batch, width, out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            value,
            Op::HeadPool {
                input,
                layout,
                weights,
            },
            rg,
            None,
        ))
    }

    /// Reverse pass from a scalar `loss`, visiting nodes in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_with(loss, Traversal::ReverseTape)
    }

    pub fn backward_with(&self, loss: Var, order: Traversal) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(KernelError::InvalidArgument {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        let schedule: Vec<usize> = match order {
            Traversal::ReverseTape => (0..=loss.0).rev().collect(),
            Traversal::ConsumerCount => self.consumer_order(loss),
        };
        for idx in schedule {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            visited += 1;
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|d| Tensor::new(node.value.shape().to_vec(), d).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads, visited })
    }

    fn consumer_order(&self, loss: Var) -> Vec<usize> {
        let mut reachable = vec![false; loss.0 + 1];
        let mut pending = vec![0usize; loss.0 + 1];
        let mut stack = vec![loss.0];
        reachable[loss.0] = true;
        while let Some(i) = stack.pop() {
            for input in self.nodes[i].op.inputs() {
                pending[input.0] += 1;
                if !reachable[input.0] {
                    reachable[input.0] = true;
                    stack.push(input.0);
                }
            }
        }
        let mut order = Vec::new();
        let mut queue = VecDeque::from([loss.0]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for input in self.nodes[i].op.inputs() {
                pending[input.0] -= 1;
                if pending[input.0] == 0 {
                    queue.push_back(input.0);
                }
            }
        }
        order
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul").unwrap();
                let n = self.value(*b).cols();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |da| gemm_nt(g, bd, da, m, n, k));
                self.accumulate(grads, *b, |db| gemm_tn(ad, g, db, m, k, n));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |da| axpy(da, 1.0, g));
                self.accumulate(grads, *b, |db| axpy(db, 1.0, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |da| axpy(da, 1.0, g));
                self.accumulate(grads, *b, |db| axpy(db, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |da| {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bd) {
                        *d += gi * bi;
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(ad) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, |da| axpy(da, *s, g)),
            Op::AddRow(a, row) => {
                let n = node.value.cols();
                self.accumulate(grads, *a, |da| axpy(da, 1.0, g));
                self.accumulate(grads, *row, |dr| {
                    for grow in g.chunks(n) {
                        axpy(dr, 1.0, grow);
                    }
                });
            }
            Op::MulRow(a, row) => {
                let n = node.value.cols();
                let (ad, rd) = (self.value(*a).data(), self.value(*row).data());
                self.accumulate(grads, *a, |da| {
                    for (drow, grow) in da.chunks_mut(n).zip(g.chunks(n)) {
                        for ((d, gi), ri) in drow.iter_mut().zip(grow).zip(rd) {
                            *d += gi * ri;
                        }
                    }
                });
                self.accumulate(grads, *row, |dr| {
                    for (grow, arow) in g.chunks(n).zip(ad.chunks(n)) {
                        for ((d, gi), ai) in dr.iter_mut().zip(grow).zip(arow) {
                            *d += gi * ai;
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2("transpose").unwrap();
                self.accumulate(grads, *a, |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let total_cols = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.value(p).dims2("concat").unwrap();
                    if *axis == 0 {
                        self.accumulate(grads, p, |dp| axpy(dp, 1.0, &g[offset * pc..(offset + pr) * pc]));
                        offset += pr;
                    } else {
                        self.accumulate(grads, p, |dp| {
                            for r in 0..pr {
                                axpy(&mut dp[r * pc..(r + 1) * pc], 1.0, &g[r * total_cols + offset..][..pc]);
                            }
                        });
                        offset += pc;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let (_, n) = self.value(*input).dims2("slice").unwrap();
                let (rows, count) = (node.value.rows(), node.value.cols());
                self.accumulate(grads, *input, |di| {
                    if *axis == 0 {
                        axpy(&mut di[start * n..(start + rows) * n], 1.0, g);
                    } else {
                        for r in 0..rows {
                            axpy(&mut di[r * n + start..][..count], 1.0, &g[r * count..(r + 1) * count]);
                        }
                    }
                });
            }
            Op::GatherRows { input, rows } => {
                let n = node.value.cols();
                self.accumulate(grads, *input, |di| {
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(&mut di[r * n..(r + 1) * n], 1.0, &g[i * n..(i + 1) * n]);
                    }
                });
            }
            Op::Relu(a) => self.accumulate(grads, *a, |da| {
                for ((d, gi), y) in da.iter_mut().zip(g).zip(out) {
                    if *y > 0.0 {
                        *d += gi;
                    }
                }
            }),
            Op::Tanh(a) => self.accumulate(grads, *a, |da| {
                for ((d, gi), y) in da.iter_mut().zip(g).zip(out) {
                    *d += gi * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |da| {
                for ((d, gi), y) in da.iter_mut().zip(g).zip(out) {
                    *d += gi * y * (1.0 - y);
                }
            }),
            Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
                let n = node.value.cols();
                self.accumulate(grads, *a, |da| {
                    for ((drow, grow), yrow) in da.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let inner = dot(grow, yrow);
                        for ((d, gi), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gi - inner);
                        }
                    }
                });
            }
            Op::LayerNormRows { input, inv_std } => {
                let n = node.value.cols();
                self.accumulate(grads, *input, |di| {
                    for (r, ((drow, grow), yrow)) in
                        di.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)).enumerate()
                    {
                        let g_mean = grow.iter().sum::<f64>() / n as f64;
                        let gy_mean = dot(grow, yrow) / n as f64;
                        for ((d, gi), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += inv_std[r] * (gi - g_mean - y * gy_mean);
                        }
                    }
                });
            }
            Op::Sum(a) => self.accumulate(grads, *a, |da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                self.accumulate(grads, *a, |da| da.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::MaskedAttention {
                q,
                k,
                v,
                layout,
                weights,
            } => self.attention_backward(idx, *q, *k, *v, *layout, weights, g, grads),
            Op::HeadPool {
                input,
                layout,
                weights,
            } => {
                let HeadLayout {
                    batch,
                    len,
                    heads,
                    head_dim,
                } = *layout;
                let width = layout.width();
                self.accumulate(grads, *input, |di| {
                    for b in 0..batch {
                        for h in 0..heads {
                            let go = &g[b * width + h * head_dim..][..head_dim];
                            for j in 0..len {
                                let w = weights[(b * heads + h) * len + j];
                                axpy(&mut di[(b * len + j) * width + h * head_dim..][..head_dim], w, go);
                            }
                        }
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        idx: usize,
        q: Var,
        k: Var,
        v: Var,
        layout: HeadLayout,
        weights: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let mask = self.masks[idx].as_ref().expect("attention mask");
        let HeadLayout {
            batch,
            len,
            heads,
            head_dim,
        } = layout;
        let width = layout.width();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let n = layout.rows() * width;
        let mut dq = vec![0.0; n];
        let mut dk = vec![0.0; n];
        let mut dv = vec![0.0; n];
        let mut dp = vec![0.0; len];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * head_dim;
                for j in 0..len {
                    let base = ((b * heads + h) * len + j) * len;
                    let row_mask = &mask[base..base + len];
                    let w = &weights[base..base + len];
                    let go = &g[(b * len + j) * width + col..][..head_dim];
                    let mut inner = 0.0;
                    for l in 0..len {
                        if row_mask[l] {
                            let vr = &vd[(b * len + l) * width + col..][..head_dim];
                            dp[l] = dot(go, vr);
                            inner += w[l] * dp[l];
                            axpy(&mut dv[(b * len + l) * width + col..][..head_dim], w[l], go);
                        }
                    }
                    let qr = &qd[(b * len + j) * width + col..][..head_dim];
                    for l in 0..len {
                        if row_mask[l] {
                            let ds = w[l] * (dp[l] - inner) * scale;
                            let kr = &kd[(b * len + l) * width + col..][..head_dim];
                            axpy(&mut dq[(b * len + j) * width + col..][..head_dim], ds, kr);
                            axpy(&mut dk[(b * len + l) * width + col..][..head_dim], ds, qr);
                        }
                    }
                }
            }
        }
        self.accumulate(grads, q, |d| axpy(d, 1.0, &dq));
        self.accumulate(grads, k, |d| axpy(d, 1.0, &dk));
        self.accumulate(grads, v, |d| axpy(d, 1.0, &dv));
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        let buf = grads[var.0].get_or_insert_with(|| vec![0.0; node.value.numel()]);
        f(buf);
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of `x` into `out`; masked-out entries get exactly 0.
pub(crate) fn softmax_into(x: &[f64], mask: Option<&[bool]>, out: &mut [f64]) {
    let admit = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..x.len())
        .filter(|&i| admit(i))
        .fold(f64::NEG_INFINITY, |m, i| m.max(x[i]));
    let mut total = 0.0;
    for i in 0..x.len() {
        out[i] = if admit(i) { (x[i] - max).exp() } else { 0.0 };
        total += out[i];
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Max-subtracted softmax of a plain slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    softmax_into(x, None, &mut out);
    out
}
