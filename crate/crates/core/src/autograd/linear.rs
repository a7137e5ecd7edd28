use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// `x [N,F] * w^T + b`, with `w [Fout,F]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let bad = |g: &Self| Error::Shape {
            op: "linear",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(w).to_vec(),
        };
        let (n, f) = match self.shape(x) {
            &[n, f] => (n, f),
            _ => return Err(bad(self)),
        };
        let fout = match self.shape(w) {
            &[o, i] if i == f => o,
            _ => return Err(bad(self)),
        };
        let mut out = vec![T::zero(); n * fout];
        matmul(n, f, fout, self.value(x).data(), false, self.value(w).data(), true, T::zero(), &mut out);
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(Error::Shape {
                    op: "linear bias",
                    lhs: vec![fout],
                    rhs: self.shape(b).to_vec(),
                });
            }
            let bv = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bv).for_each(|(o, &bb)| *o += bb);
            }
        }
        let value = Tensor::from_vec(vec![n, fout], out)?;
        self.push("linear", value, Op::Linear { x, w, b })
    }
}

pub(super) fn linear_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
    adj: &mut Adjoints<T>,
) {
    let xt = graph.value(x);
    let wt = graph.value(w);
    let (n, f) = (xt.shape()[0], xt.shape()[1]);
    let fout = wt.shape()[0];
    if let Some(b) = b {
        let db = adj.get_mut(b, fout);
        for row in g.chunks(fout) {
            db.iter_mut().zip(row).for_each(|(d, &gv)| *d += gv);
        }
    }
    {
        // dW (fout x f) += dY^T (fout x n) * X (n x f)
        let dw = adj.get_mut(w, wt.numel());
        matmul(fout, n, f, g, true, xt.data(), false, T::one(), dw);
    }
    // dX (n x f) += dY (n x fout) * W (fout x f)
    let dx = adj.get_mut(x, xt.numel());
    matmul(n, fout, f, g, false, wt.data(), false, T::one(), dx);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut eye = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let w = g.constant(eye);
        let zero = g.constant(Tensor::zeros(vec![3]));
        let y = g.linear(x, w, Some(zero)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);

        let ones = g.constant(Tensor::ones(vec![2, 3]));
        let bias = g.constant(Tensor::from_vec(vec![2], vec![0.5, -1.0]).unwrap());
        let y = g.linear(x, ones, Some(bias)).unwrap();
        assert_eq!(g.value(y).data(), &[6.5, 5.0]);
    }

    #[test]
    fn mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(vec![1, 3]));
        let w = g.constant(Tensor::ones(vec![2, 4]));
        assert!(matches!(g.linear(x, w, None), Err(Error::Shape { .. })));
    }
}
