use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().with_requires_grad(false);
        let mut value = value.reshape(shape.to_vec())?;
        value.clear_grad();
        self.push("reshape", value, Op::Reshape(x))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Invalid("concat of nothing".into()))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::Shape {
                    op: "concat_channels",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for img in 0..n {
            for (&p, &pc) in parts.iter().zip(&channels) {
                out.extend_from_slice(&self.value(p).data()[img * pc * plane..(img + 1) * pc * plane]);
            }
        }
        let value = Tensor::from_vec(vec![n, total, h, w], out)?;
        self.push("concat_channels", value, Op::Concat(parts.to_vec()))
    }
}

pub(super) fn concat_backward<T: Scalar>(graph: &Graph<T>, parts: &[Var], g: &[T], adj: &mut Adjoints<T>) {
    let dims: Vec<_> = parts.iter().map(|&p| graph.value(p).dims4().expect("rank 4")).collect();
    let (n, _, h, w) = dims[0];
    let plane = h * w;
    let total: usize = dims.iter().map(|d| d.1).sum();
    let mut offset = 0;
    for (&p, d) in parts.iter().zip(&dims) {
        let len = d.1 * plane;
        let dp = adj.get_mut(p, n * len);
        for img in 0..n {
            let src = &g[img * total * plane + offset..img * total * plane + offset + len];
            dp[img * len..(img + 1) * len].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
        }
        offset += len;
    }
}
