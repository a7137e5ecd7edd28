use super::{Adjoints, Graph, Op, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Logistic function without overflow for large `|z|`.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    let e = (-z.abs()).exp();
    let num = if z >= T::zero() { T::one() } else { e };
    num / (T::one() + e)
}

impl<T: Scalar> Graph<T> {
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(x))
    }

    /// `z * sigmoid(z)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let sig: Vec<T> = xt.data().iter().map(|&z| sigmoid(z)).collect();
        let out = xt.data().iter().zip(&sig).map(|(&z, &s)| z * s).collect();
        let value = Tensor::from_vec(xt.shape().to_vec(), out)?;
        self.push("silu", value, Op::Silu { x, sig })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|z| z.max(T::zero()));
        self.push("relu", value, Op::Relu(x))
    }
}

pub(super) fn silu_backward<T: Scalar>(graph: &Graph<T>, x: Var, sig: &[T], g: &[T], adj: &mut Adjoints<T>) {
    let xv = graph.value(x).data();
    let dx = adj.get_mut(x, xv.len());
    for (((d, &gv), &z), &s) in dx.iter_mut().zip(g).zip(xv).zip(sig) {
        *d += gv * s * (T::one() + z * (T::one() - s));
    }
}

pub(super) fn sigmoid_backward<T: Scalar>(out: &Tensor<T>, x: Var, g: &[T], adj: &mut Adjoints<T>) {
    let dx = adj.get_mut(x, g.len());
    for ((d, &gv), &s) in dx.iter_mut().zip(g).zip(out.data()) {
        *d += gv * s * (T::one() - s);
    }
}

pub(super) fn relu_backward<T: Scalar>(graph: &Graph<T>, x: Var, g: &[T], adj: &mut Adjoints<T>) {
    let xv = graph.value(x).data();
    let dx = adj.get_mut(x, xv.len());
    for ((d, &gv), &z) in dx.iter_mut().zip(g).zip(xv) {
        if z > T::zero() {
            *d += gv;
        }
    }
}
