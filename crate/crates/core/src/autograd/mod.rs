//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order. Leaves own copies
//! of their tensors; [`Graph::backward`] walks the tape once in reverse and
//! accumulates gradients into every leaf that requires them.

mod activation;
mod broadcast;
mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;
mod pool;
mod shape;

pub use activation::sigmoid;
pub use norm::{BatchNormMode, RunningStats};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Depthwise {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Silu {
        x: Var,
        sig: Vec<T>,
    },
    Sigmoid(Var),
    Relu(Var),
    GlobalAvgPool(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Mask {
        x: Var,
        mask: Vec<T>,
        span: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelMean(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Execution record of one forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    checked: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: false,
        }
    }

    /// A graph whose every op fails on non-finite output.
    pub fn checked() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it receives gradients iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// A trainable leaf holding a copy of `tensor`.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Var {
        let mut t = tensor.clone();
        t.clear_grad();
        self.leaf(t.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients accumulate into leaves across repeated calls until
    /// [`Graph::zero_grad`] is invoked.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut adj = Adjoints::new(self.nodes.len());
        adj.bufs[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj.bufs[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                adj.bufs[idx] = Some(g);
                continue;
            }
            self.backward_node(idx, &g, &mut adj);
        }
        for (idx, buf) in adj.bufs.into_iter().enumerate() {
            let node = &mut self.nodes[idx];
            if let (Op::Leaf, Some(g)) = (&node.op, buf) {
                if node.value.requires_grad() {
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[T], adj: &mut Adjoints<T>) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                conv::conv2d_backward(self, *x, *w, *b, *stride, *pad, g, adj)
            }
            Op::Depthwise { x, w, stride, pad } => {
                conv::depthwise_backward(self, *x, *w, *stride, *pad, g, adj)
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => norm::batch_norm_backward(
                self,
                *x,
                *gamma,
                *beta,
                xhat,
                inv_std,
                *batch_stats,
                g,
                adj,
            ),
            Op::Silu { x, sig } => activation::silu_backward(self, *x, sig, g, adj),
            Op::Sigmoid(x) => activation::sigmoid_backward(&node.value, *x, g, adj),
            Op::Relu(x) => activation::relu_backward(self, *x, g, adj),
            Op::GlobalAvgPool(x) => pool::global_avg_pool_backward(self, *x, g, adj),
            Op::MaxPool { x, argmax } => pool::index_backward(self, *x, argmax, g, adj),
            Op::ChannelMax { x, argmax } => pool::index_backward(self, *x, argmax, g, adj),
            Op::ChannelMean(x) => pool::channel_mean_backward(self, *x, g, adj),
            Op::Linear { x, w, b } => linear::linear_backward(self, *x, *w, *b, g, adj),
            Op::Mask { x, mask, span } => elementwise::mask_backward(*x, mask, *span, g, adj),
            Op::Add(a, b) => elementwise::add_backward(self, &node.value, *a, *b, g, adj),
            Op::Mul(a, b) => elementwise::mul_backward(self, &node.value, *a, *b, g, adj),
            Op::Scale(x, s) => {
                let dx = adj.get_mut(*x, g.len());
                dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * *s);
            }
            Op::Concat(parts) => shape::concat_backward(self, parts, g, adj),
            Op::Reshape(x) => {
                let dx = adj.get_mut(*x, g.len());
                dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                let dx = adj.get_mut(*x, n);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => loss::softmax_ce_backward(*logits, probs, labels, g, adj),
        }
    }
}

/// Lazily allocated adjoint buffers, one per node.
pub(crate) struct Adjoints<T> {
    bufs: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Adjoints<T> {
    fn new(n: usize) -> Self {
        Self {
            bufs: (0..n).map(|_| None).collect(),
        }
    }

    pub(crate) fn get_mut(&mut self, v: Var, len: usize) -> &mut [T] {
        self.bufs[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(vec![3], vec![1.0, -2.0, 5.0]).unwrap().with_requires_grad(true));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gives_two_x() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(vec![3], vec![1.0, -2.0, 5.0]).unwrap().with_requires_grad(true));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 10.0]);
    }

    #[test]
    fn repeated_backward_accumulates_then_zeroes() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::ones(vec![2]).with_requires_grad(true));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        g.zero_grad();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::ones(vec![2]).with_requires_grad(true));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::ones(vec![2]));
        let x = g.leaf(Tensor::ones(vec![2]).with_requires_grad(true));
        let p = g.mul(c, x).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert!(g.grad(x).is_some());
    }

    #[test]
    fn checked_mode_rejects_non_finite() {
        let mut g = Graph::<f64>::checked();
        let x = g.constant(Tensor::full(vec![1], f64::MAX));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { .. })));
    }
}

