//! Reverse-mode automatic differentiation over dense tensors.
//!
//! The graph is define-by-run: operations append nodes to a [`Graph`] and
//! creation order doubles as a topological order, so [`Graph::backward`]
//! is a single reverse sweep. Graphs are rebuilt from scratch every
//! training step; trainable values live in a
//! [`ParamStore`](crate::nn::ParamStore) and enter the graph as leaves.
//!
//! The one non-standard operation is [`Graph::gradient_reversal`]: identity
//! in the forward pass, multiplication by a negative constant in the
//! backward pass. It is what turns the adversarial minimax into a single
//! minimization.

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use std::collections::HashMap;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Operation record; stores parent ids plus whatever the backward rule needs.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Matmul { a: NodeId, b: NodeId },
    MatmulTB { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    Exp { x: NodeId },
    Log { x: NodeId },
    Softmax { x: NodeId },
    LogSoftmax { x: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
    Scale { x: NodeId, factor: f64 },
    Concat { parts: Vec<NodeId> },
    SelectRows { x: NodeId, indices: Vec<usize> },
    DropoutMask { x: NodeId, mask: Tensor },
    Grl { x: NodeId, lambda: f64 },
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::Matmul { a, b }
            | Op::MatmulTB { a, b } => vec![*a, *b],
            Op::Relu { x }
            | Op::Exp { x }
            | Op::Log { x }
            | Op::Softmax { x }
            | Op::LogSoftmax { x }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::Scale { x, .. }
            | Op::SelectRows { x, .. }
            | Op::DropoutMask { x, .. }
            | Op::Grl { x, .. } => vec![*x],
            Op::Concat { parts } => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    param: Option<ParamId>,
    op: Op,
}

/// A single-use computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// How two elementwise operands line up: identical shapes, or a rank-1
/// right operand broadcast over the leading batch dimension of a rank-2
/// left operand (the bias case).
enum Broadcast {
    Same,
    RowVector,
}

fn check_elementwise(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    if a.rank() == 2 && b.rank() == 1 && a.cols() == b.len() {
        return Ok(Broadcast::RowVector);
    }
    Err(Error::ShapeMismatch {
        op,
        details: format!("{:?} vs {:?}", a.shape(), b.shape()),
    })
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let (rows, cols) = row_view(x);
    let mut out = Vec::with_capacity(x.len());
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let (rows, cols) = row_view(x);
    let mut out = Vec::with_capacity(x.len());
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        out.extend(row.iter().map(|v| v - lse));
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Treat a rank-1 or rank-2 tensor as rows x cols over the last axis.
fn row_view(x: &Tensor) -> (usize, usize) {
    match x.rank() {
        1 => (1, x.len()),
        2 => (x.rows(), x.cols()),
        _ => panic!("softmax over rank > 2 unsupported"),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated at `id` by the last [`Graph::backward`] call;
    /// zeros if the node was never reached.
    pub fn grad(&self, id: NodeId) -> Tensor {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[id.0].value.shape().to_vec()),
        }
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>, op: Op) -> NodeId {
        self.nodes.push(Node { value, grad: None, requires_grad, param, op });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op) -> NodeId {
        let requires = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, requires, None, op)
    }

    /// Insert a constant or trainable leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, None, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// Insert a leaf holding the current value of a stored parameter. After
    /// [`Graph::backward`], the accumulated gradient can be collected per
    /// parameter with [`Graph::param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), true, Some(id), Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = match check_elementwise("add", va, vb)? {
            Broadcast::Same => {
                let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
                Tensor::new(va.shape().to_vec(), data).unwrap()
            }
            Broadcast::RowVector => {
                let cols = va.cols();
                let data = va
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x + vb.data()[i % cols])
                    .collect();
                Tensor::new(va.shape().to_vec(), data).unwrap()
            }
        };
        Ok(self.push_op(out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = match check_elementwise("sub", va, vb)? {
            Broadcast::Same => {
                let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
                Tensor::new(va.shape().to_vec(), data).unwrap()
            }
            Broadcast::RowVector => {
                let cols = va.cols();
                let data = va
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x - vb.data()[i % cols])
                    .collect();
                Tensor::new(va.shape().to_vec(), data).unwrap()
            }
        };
        Ok(self.push_op(out, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = match check_elementwise("mul", va, vb)? {
            Broadcast::Same => {
                let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                Tensor::new(va.shape().to_vec(), data).unwrap()
            }
            Broadcast::RowVector => {
                let cols = va.cols();
                let data = va
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * vb.data()[i % cols])
                    .collect();
                Tensor::new(va.shape().to_vec(), data).unwrap()
            }
        };
        Ok(self.push_op(out, Op::Mul { a, b }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                details: format!("{:?} x {:?}", va.shape(), vb.shape()),
            });
        }
        let out = matmul_values(va, vb);
        Ok(self.push_op(out, Op::Matmul { a, b }))
    }

    /// `a * b^T` without materializing the transpose: a is m x k, b is
    /// n x k, output m x n. This is the natural layout for dense layers
    /// whose weights are stored out x in.
    pub fn matmul_tb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.cols() {
            return Err(Error::ShapeMismatch {
                op: "matmul_tb",
                details: format!("{:?} x {:?}^T", va.shape(), vb.shape()),
            });
        }
        let out = matmul_tb_values(va, vb);
        Ok(self.push_op(out, Op::MatmulTB { a, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x.0].value.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data).unwrap();
        self.push_op(out, Op::Relu { x })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x.0].value.data().iter().map(|v| v.exp()).collect();
        let out = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data).unwrap();
        self.push_op(out, Op::Exp { x })
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.data().iter().any(|&e| e <= 0.0) {
            return Err(Error::InvalidArgument("log of non-positive value".into()));
        }
        let data = v.data().iter().map(|e| e.ln()).collect();
        let out = Tensor::new(v.shape().to_vec(), data).unwrap();
        Ok(self.push_op(out, Op::Log { x }))
    }

    /// Softmax over the last axis of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.rank() > 2 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                details: format!("rank {} unsupported", v.rank()),
            });
        }
        let out = softmax_rows(v);
        Ok(self.push_op(out, Op::Softmax { x }))
    }

    /// Log-softmax over the last axis, computed with max-subtraction.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.rank() > 2 {
            return Err(Error::ShapeMismatch {
                op: "log_softmax",
                details: format!("rank {} unsupported", v.rank()),
            });
        }
        let out = log_softmax_rows(v);
        Ok(self.push_op(out, Op::LogSoftmax { x }))
    }

    /// Sum of all elements, yielding a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum { x })
    }

    /// Mean of all elements, yielding a scalar node.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push_op(Tensor::scalar(m), Op::Mean { x })
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let data = self.nodes[x.0].value.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data).unwrap();
        self.push_op(out, Op::Scale { x, factor })
    }

    /// Concatenate along the leading (batch) axis. All parts must share
    /// trailing dimensions; rank-1 parts are joined end to end.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = &self.nodes[parts[0].0].value;
        let rank = first.rank();
        let mut data = Vec::new();
        let mut lead = 0usize;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.rank() != rank || (rank == 2 && v.cols() != first.cols()) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    details: format!("{:?} vs {:?}", v.shape(), first.shape()),
                });
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let shape = if rank == 1 { vec![lead] } else { vec![lead, first.cols()] };
        let out = Tensor::new(shape, data).unwrap();
        Ok(self.push_op(out, Op::Concat { parts: parts.to_vec() }))
    }

    /// Copy the given rows of a rank-2 tensor into a new node.
    pub fn select_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let out = self.nodes[x.0].value.gather_rows(indices)?;
        Ok(self.push_op(out, Op::SelectRows { x, indices: indices.to_vec() }))
    }

    /// Multiply by a pre-sampled dropout mask (already scaled by 1/(1-p)).
    pub fn dropout_mask(&mut self, x: NodeId, mask: Tensor) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.shape() != mask.shape() {
            return Err(Error::ShapeMismatch {
                op: "dropout_mask",
                details: format!("{:?} vs mask {:?}", v.shape(), mask.shape()),
            });
        }
        let data = v.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
        let out = Tensor::new(v.shape().to_vec(), data).unwrap();
        Ok(self.push_op(out, Op::DropoutMask { x, mask }))
    }

    /// Gradient reversal: forward is the identity (bit-exact), backward
    /// multiplies the incoming gradient by `-lambda`.
    pub fn gradient_reversal(&mut self, x: NodeId, lambda: f64) -> NodeId {
        let out = self.nodes[x.0].value.clone();
        self.push_op(out, Op::Grl { x, lambda })
    }

    /// Backpropagate from a scalar root. Gradients accumulate additively
    /// across graph paths; each node is visited exactly once, in reverse
    /// creation (= reverse topological) order.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    /// Sum accumulated gradients per parameter leaf (a parameter may feed
    /// the graph through several leaves).
    pub fn param_grads(&self) -> HashMap<ParamId, Tensor> {
        let mut out: HashMap<ParamId, Tensor> = HashMap::new();
        for node in &self.nodes {
            let (Some(pid), Some(g)) = (node.param, &node.grad) else { continue };
            out.entry(pid)
                .and_modify(|acc| {
                    let data: Vec<f64> =
                        acc.data().iter().zip(g.data()).map(|(a, b)| a + b).collect();
                    *acc = Tensor::new(acc.shape().to_vec(), data).unwrap();
                })
                .or_insert_with(|| g.clone());
        }
        out
    }

    fn accumulate(grads: &mut [Option<Tensor>], target: NodeId, delta: Tensor) {
        match &mut grads[target.0] {
            Some(existing) => {
                let data: Vec<f64> =
                    existing.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect();
                *existing = Tensor::new(existing.shape().to_vec(), data).unwrap();
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// For a broadcast operand, fold the full-shape gradient back to the
    /// operand's own shape (summing over the batch axis if needed).
    fn reduce_to_shape(grad_full: Vec<f64>, full: &Tensor, operand: &Tensor) -> Tensor {
        if operand.shape() == full.shape() {
            return Tensor::new(operand.shape().to_vec(), grad_full).unwrap();
        }
        let cols = operand.len();
        let mut out = vec![0.0; cols];
        for (i, v) in grad_full.iter().enumerate() {
            out[i % cols] += v;
        }
        Tensor::from_vec(out)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let op = self.nodes[i].op.clone();
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                let out_v = &self.nodes[i].value;
                if needs(a) {
                    let da = Self::reduce_to_shape(g.data().to_vec(), out_v, &self.nodes[a.0].value);
                    Self::accumulate(grads, a, da);
                }
                if needs(b) {
                    let db = Self::reduce_to_shape(g.data().to_vec(), out_v, &self.nodes[b.0].value);
                    Self::accumulate(grads, b, db);
                }
            }
            Op::Sub { a, b } => {
                let out_v = &self.nodes[i].value;
                if needs(a) {
                    let da = Self::reduce_to_shape(g.data().to_vec(), out_v, &self.nodes[a.0].value);
                    Self::accumulate(grads, a, da);
                }
                if needs(b) {
                    let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                    let db = Self::reduce_to_shape(neg, out_v, &self.nodes[b.0].value);
                    Self::accumulate(grads, b, db);
                }
            }
            Op::Mul { a, b } => {
                let out_v = &self.nodes[i].value;
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if needs(a) {
                    // d/da (a*b) = g * b, with b possibly broadcast over rows
                    let db_full: Vec<f64> = if va.shape() == vb.shape() {
                        g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect()
                    } else {
                        let cols = va.cols();
                        g.data()
                            .iter()
                            .enumerate()
                            .map(|(k, x)| x * vb.data()[k % cols])
                            .collect()
                    };
                    Self::accumulate(grads, a, Tensor::new(va.shape().to_vec(), db_full).unwrap());
                }
                if needs(b) {
                    let full: Vec<f64> = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    let db = Self::reduce_to_shape(full, out_v, vb);
                    Self::accumulate(grads, b, db);
                }
            }
            Op::Matmul { a, b } => {
                // C = A B: dA = G B^T, dB = A^T G
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if needs(a) {
                    Self::accumulate(grads, a, matmul_tb_values(g, vb));
                }
                if needs(b) {
                    Self::accumulate(grads, b, matmul_ta_values(va, g));
                }
            }
            Op::MatmulTB { a, b } => {
                // C = A B^T: dA = G B, dB = G^T A
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if needs(a) {
                    Self::accumulate(grads, a, matmul_values(g, vb));
                }
                if needs(b) {
                    Self::accumulate(grads, b, matmul_ta_values(g, va));
                }
            }
            Op::Relu { x } => {
                if needs(x) {
                    let vx = &self.nodes[x.0].value;
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(vx.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    Self::accumulate(grads, x, Tensor::new(vx.shape().to_vec(), data).unwrap());
                }
            }
            Op::Exp { x } => {
                if needs(x) {
                    let out_v = &self.nodes[i].value;
                    let data: Vec<f64> =
                        g.data().iter().zip(out_v.data()).map(|(gv, ev)| gv * ev).collect();
                    Self::accumulate(grads, x, Tensor::new(out_v.shape().to_vec(), data).unwrap());
                }
            }
            Op::Log { x } => {
                if needs(x) {
                    let vx = &self.nodes[x.0].value;
                    let data: Vec<f64> =
                        g.data().iter().zip(vx.data()).map(|(gv, xv)| gv / xv).collect();
                    Self::accumulate(grads, x, Tensor::new(vx.shape().to_vec(), data).unwrap());
                }
            }
            Op::Softmax { x } => {
                if needs(x) {
                    let y = &self.nodes[i].value;
                    let (rows, cols) = row_view(y);
                    let mut data = Vec::with_capacity(y.len());
                    for r in 0..rows {
                        let yr = &y.data()[r * cols..(r + 1) * cols];
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        data.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                    }
                    Self::accumulate(grads, x, Tensor::new(y.shape().to_vec(), data).unwrap());
                }
            }
            Op::LogSoftmax { x } => {
                if needs(x) {
                    let out_v = &self.nodes[i].value;
                    let (rows, cols) = row_view(out_v);
                    let mut data = Vec::with_capacity(out_v.len());
                    for r in 0..rows {
                        let lr = &out_v.data()[r * cols..(r + 1) * cols];
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let gsum: f64 = gr.iter().sum();
                        data.extend(lr.iter().zip(gr).map(|(lv, gv)| gv - lv.exp() * gsum));
                    }
                    Self::accumulate(grads, x, Tensor::new(out_v.shape().to_vec(), data).unwrap());
                }
            }
            Op::Sum { x } => {
                if needs(x) {
                    let vx = &self.nodes[x.0].value;
                    let gv = g.item();
                    Self::accumulate(
                        grads,
                        x,
                        Tensor::new(vx.shape().to_vec(), vec![gv; vx.len()]).unwrap(),
                    );
                }
            }
            Op::Mean { x } => {
                if needs(x) {
                    let vx = &self.nodes[x.0].value;
                    let gv = g.item() / vx.len() as f64;
                    Self::accumulate(
                        grads,
                        x,
                        Tensor::new(vx.shape().to_vec(), vec![gv; vx.len()]).unwrap(),
                    );
                }
            }
            Op::Scale { x, factor } => {
                if needs(x) {
                    let data: Vec<f64> = g.data().iter().map(|v| v * factor).collect();
                    Self::accumulate(
                        grads,
                        x,
                        Tensor::new(self.nodes[x.0].value.shape().to_vec(), data).unwrap(),
                    );
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0usize;
                for p in parts {
                    let v = &self.nodes[p.0].value;
                    let n = v.len();
                    if needs(p) {
                        let slice = g.data()[offset..offset + n].to_vec();
                        Self::accumulate(grads, p, Tensor::new(v.shape().to_vec(), slice).unwrap());
                    }
                    offset += n;
                }
            }
            Op::SelectRows { x, indices } => {
                if needs(x) {
                    let vx = &self.nodes[x.0].value;
                    let cols = vx.cols();
                    let mut data = vec![0.0; vx.len()];
                    for (out_r, &src_r) in indices.iter().enumerate() {
                        for c in 0..cols {
                            data[src_r * cols + c] += g.data()[out_r * cols + c];
                        }
                    }
                    Self::accumulate(grads, x, Tensor::new(vx.shape().to_vec(), data).unwrap());
                }
            }
            Op::DropoutMask { x, mask } => {
                if needs(x) {
                    let data: Vec<f64> =
                        g.data().iter().zip(mask.data()).map(|(gv, m)| gv * m).collect();
                    Self::accumulate(grads, x, Tensor::new(mask.shape().to_vec(), data).unwrap());
                }
            }
            Op::Grl { x, lambda } => {
                if needs(x) {
                    let data: Vec<f64> = g.data().iter().map(|v| -lambda * v).collect();
                    Self::accumulate(
                        grads,
                        x,
                        Tensor::new(self.nodes[x.0].value.shape().to_vec(), data).unwrap(),
                    );
                }
            }
        }
    }
}

fn matmul_values(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate().take(k) {
            let brow = &b.data()[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}

/// A * B^T with A m x k and B n x k.
fn matmul_tb_values(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (o, j) in orow.iter_mut().zip(0..n) {
            let brow = &b.data()[j * k..(j + 1) * k];
            *o = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}

/// A^T * B with A m x k and B m x n.
fn matmul_ta_values(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = a.row(i);
        let brow = b.row(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(k, n, out).unwrap()
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn vec_node(g: &mut Graph, data: Vec<f64>, requires_grad: bool) -> NodeId {
        g.leaf(Tensor::from_vec(data), requires_grad)
    }

    #[test]
    fn add_elementwise() {
        let mut g = Graph::new();
        let a = vec_node(&mut g, vec![1.0, 2.0], false);
        let b = vec_node(&mut g, vec![3.0, 4.0], false);
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_rejects_mismatched_shapes() {
        let mut g = Graph::new();
        let a = vec_node(&mut g, vec![1.0, 2.0], false);
        let b = vec_node(&mut g, vec![1.0, 2.0, 3.0], false);
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = vec_node(&mut g, vec![0.0, 0.0, 0.0], false);
        let s = g.softmax(x).unwrap();
        for v in g.value(s).data() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    // independent triple-loop oracle for matrix multiplication
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut r = crate::rng::stream_rng(7, 0, 0);
        let a = Tensor::matrix(2, 3, (0..6).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::matrix(3, 2, (0..6).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let expected = matmul_oracle(&a, &b);
        let mut g = Graph::new();
        let an = g.leaf(a, false);
        let bn = g.leaf(b, false);
        let c = g.matmul(an, bn).unwrap();
        for (got, want) in g.value(c).data().iter().zip(&expected) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![2, 3]), false);
        let b = g.leaf(Tensor::zeros(vec![2, 2]), false);
        assert!(g.matmul(a, b).is_err());
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = vec_node(&mut g, vec![1.0, 0.0], false);
        assert!(g.log(x).is_err());
        let y = vec_node(&mut g, vec![1.0, -2.0], false);
        assert!(g.log(y).is_err());
    }

    #[test]
    fn gradient_reversal_forward_is_bit_identical() {
        let mut g = Graph::new();
        let x = vec_node(&mut g, vec![1.5, -2.0], true);
        let y = g.gradient_reversal(x, 1.0);
        assert_eq!(g.value(y).data(), g.value(x).data());
        let before: Vec<u64> = g.value(x).data().iter().map(|v| v.to_bits()).collect();
        let after: Vec<u64> = g.value(y).data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn gradient_reversal_negates_backward() {
        // root = sum(grl(x) * c) so upstream grad at grl output is c
        let mut g = Graph::new();
        let x = vec_node(&mut g, vec![1.0, 2.0], true);
        let r = g.gradient_reversal(x, 1.0);
        let c = vec_node(&mut g, vec![3.0, -5.0], false);
        let p = g.mul(r, c).unwrap();
        let root = g.sum(p);
        g.backward(root).unwrap();
        assert_eq!(g.grad(x).data(), &[-3.0, 5.0]);
    }

    #[test]
    fn double_reversal_matches_plain_path() {
        let build = |reversals: usize| {
            let mut g = Graph::new();
            let x = vec_node(&mut g, vec![0.5, -1.5, 2.0], true);
            let mut h = x;
            for _ in 0..reversals {
                h = g.gradient_reversal(h, 1.0);
            }
            let sq = g.mul(h, h).unwrap();
            let root = g.sum(sq);
            g.backward(root).unwrap();
            g.grad(x).data().to_vec()
        };
        assert_eq!(build(2), build(0));
    }

    #[test]
    fn backward_of_quadratic() {
        let mut g = Graph::new();
        let w = vec_node(&mut g, vec![1.0, 2.0, 3.0], true);
        let sq = g.mul(w, w).unwrap();
        let root = g.sum(sq);
        g.backward(root).unwrap();
        assert_eq!(g.grad(w).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let w = vec_node(&mut g, vec![1.0, 2.0], true);
        assert!(g.backward(w).is_err());
    }

    #[test]
    fn constant_nodes_keep_zero_gradient() {
        let mut g = Graph::new();
        let w = vec_node(&mut g, vec![1.0, 2.0], true);
        let c = vec_node(&mut g, vec![5.0, 7.0], false);
        let p = g.mul(w, c).unwrap();
        let root = g.sum(p);
        g.backward(root).unwrap();
        assert_eq!(g.grad(c).data(), &[0.0, 0.0]);
        assert_eq!(g.grad(w).data(), &[5.0, 7.0]);
    }

    #[test]
    fn gradients_accumulate_across_paths() {
        // y = sum(x) + sum(x): dy/dx = 2
        let mut g = Graph::new();
        let x = vec_node(&mut g, vec![1.0, 4.0], true);
        let s1 = g.sum(x);
        let s2 = g.sum(x);
        let root = g.add(s1, s2).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(x).data(), &[2.0, 2.0]);
    }

    #[test]
    fn select_rows_scatters_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap(), true);
        let sel = g.select_rows(x, &[2, 2, 0]).unwrap();
        let root = g.sum(sel);
        g.backward(root).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn bias_broadcast_add_sums_gradient_over_batch() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap(), false);
        let b = vec_node(&mut g, vec![10.0, 20.0], true);
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[11., 22., 13., 24.]);
        let root = g.sum(y);
        g.backward(root).unwrap();
        assert_eq!(g.grad(b).data(), &[2.0, 2.0]);
    }

    proptest! {
        #[test]
        // logit spread capped below ~36: past that exp(-gap) drops under one
        // ulp of 1.0 and the largest output saturates to exactly 1.0
        fn softmax_rows_are_distributions(logits in proptest::collection::vec(-15.0f64..15.0, 2..8)) {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::from_vec(logits.clone()), false);
            let s = g.softmax(x).unwrap();
            let row = g.value(s).data();
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn softmax_invariant_to_logit_shift(
            logits in proptest::collection::vec(-20.0f64..20.0, 3),
            shift in -50.0f64..50.0,
        ) {
            let eval = |data: Vec<f64>| {
                let mut g = Graph::new();
                let x = g.leaf(Tensor::from_vec(data), false);
                let s = g.softmax(x).unwrap();
                g.value(s).data().to_vec()
            };
            let base = eval(logits.clone());
            let shifted = eval(logits.iter().map(|v| v + shift).collect());
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
