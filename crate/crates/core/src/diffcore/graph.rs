//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only list of nodes. Every op evaluates eagerly
//! and records its inputs, so node ids are already a topological order and
//! [`Graph::backward`] is a single reverse sweep. Gradient contributions are
//! accumulated in that fixed order, which keeps results bitwise reproducible.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Scale(NodeId, T),
    Relu(NodeId),
    Abs(NodeId),
    L2NormalizeRows(NodeId),
    LogSoftmaxRows(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Computation graph. Exclusively owned by one worker while in use.
#[derive(Clone, Debug)]
pub struct Graph<T = f64> {
    nodes: Vec<Node<T>>,
    seed: u64,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T = f64> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new(0)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), v, rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(Op::Transpose(a), v, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    /// Broadcast-adds vector `b` to every row of matrix `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::AddRow(a, b), v, rg))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul_elem(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MulElem(a, b), v, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), v, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).relu();
        let rg = self.rg(a);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.abs());
        let rg = self.rg(a);
        self.push(Op::Abs(a), v, rg)
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).l2_normalize_rows()?;
        let rg = self.rg(a);
        Ok(self.push(Op::L2NormalizeRows(a), v, rg))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).log_softmax_rows()?;
        let rg = self.rg(a);
        Ok(self.push(Op::LogSoftmaxRows(a), v, rg))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).exp();
        let rg = self.rg(a);
        self.push(Op::Exp(a), v, rg)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).ln()?;
        let rg = self.rg(a);
        Ok(self.push(Op::Log(a), v, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), v, rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(Op::Mean(a), v, rg)
    }

    /// Back-propagates from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Shape {
                op: "backward",
                lhs: lv.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![T::one()])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].clone() else {
                continue;
            };
            let mut send = |target: NodeId, contrib: Tensor<T>| -> Result<()> {
                if !self.rg(target) {
                    return Ok(());
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => {
                        *slot = Some(contrib);
                        Ok(())
                    }
                }
            };
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.rg(a) {
                        send(a, g.matmul(&self.value(b).transpose()?)?)?;
                    }
                    if self.rg(b) {
                        send(b, self.value(a).transpose()?.matmul(&g)?)?;
                    }
                }
                Op::Transpose(a) => send(a, g.transpose()?)?,
                Op::Add(a, b) => {
                    send(a, g.clone())?;
                    send(b, g)?;
                }
                Op::Sub(a, b) => {
                    send(a, g.clone())?;
                    send(b, g.scale(-T::one()))?;
                }
                Op::AddRow(a, b) => {
                    if self.rg(b) {
                        send(b, g.sum_rows()?)?;
                    }
                    send(a, g)?;
                }
                Op::MulElem(a, b) => {
                    if self.rg(a) {
                        send(a, g.mul_elem(self.value(b))?)?;
                    }
                    if self.rg(b) {
                        send(b, g.mul_elem(self.value(a))?)?;
                    }
                }
                Op::Scale(a, c) => send(a, g.scale(c))?,
                Op::Relu(a) => {
                    let mask = self.value(a).map(|x| if x > T::zero() { T::one() } else { T::zero() });
                    send(a, g.mul_elem(&mask)?)?;
                }
                Op::Abs(a) => {
                    let sign = self.value(a).map(|x| {
                        if x > T::zero() {
                            T::one()
                        } else if x < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        }
                    });
                    send(a, g.mul_elem(&sign)?)?;
                }
                Op::L2NormalizeRows(a) => {
                    let x = self.value(a);
                    let y = &node.value;
                    let mut dx = Tensor::zeros(x.shape());
                    for i in 0..x.rows() {
                        let norm = x.row(i).iter().map(|&v| v * v).sum::<T>().sqrt();
                        if norm == T::zero() {
                            continue;
                        }
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *d = (gv - yv * dot) / norm;
                        }
                    }
                    send(a, dx)?;
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = g.clone();
                    for i in 0..y.rows() {
                        let gsum: T = g.row(i).iter().copied().sum();
                        for (d, &yv) in dx.row_mut(i).iter_mut().zip(y.row(i)) {
                            *d = *d - yv.exp() * gsum;
                        }
                    }
                    send(a, dx)?;
                }
                Op::Exp(a) => send(a, g.mul_elem(&node.value)?)?,
                Op::Log(a) => {
                    let x = self.value(a);
                    let dx = g.zip_div(x)?;
                    send(a, dx)?;
                }
                Op::Sum(a) => {
                    let gv = g.item()?;
                    let shape = self.value(a).shape().to_vec();
                    let n = self.value(a).numel();
                    send(a, Tensor::new(shape, vec![gv; n])?)?;
                }
                Op::Mean(a) => {
                    let n = self.value(a).numel();
                    let gv = g.item()? / T::lit(n.max(1) as f64);
                    let shape = self.value(a).shape().to_vec();
                    send(a, Tensor::new(shape, vec![gv; n])?)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<T: Scalar> Tensor<T> {
    fn zip_div(&self, other: &Self) -> Result<Self> {
        let ratio = other.map(|x| T::one() / x);
        self.mul_elem(&ratio)
    }
}
