use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Mean negative log-softmax of the true class over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = match self.shape(logits) {
            &[n, k] if n == labels.len() => (n, k),
            s => {
                return Err(Error::Shape {
                    op: "softmax_cross_entropy",
                    lhs: s.to_vec(),
                    rhs: vec![labels.len()],
                })
            }
        };
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label, classes: k });
        }
        let lv = self.value(logits).data();
        let mut probs = Vec::with_capacity(n * k);
        let mut total = T::zero();
        for (row, &label) in lv.chunks(k).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
            let log_sum = sum.ln();
            total += log_sum - (row[label] - max);
            probs.extend(row.iter().map(|&z| (z - max).exp() / sum));
        }
        let loss = total / T::from_usize(n).unwrap();
        self.push(
            "softmax_cross_entropy",
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        )
    }
}

pub(super) fn softmax_ce_backward<T: Scalar>(
    logits: Var,
    probs: &[T],
    labels: &[usize],
    g: &[T],
    adj: &mut Adjoints<T>,
) {
    let n = labels.len();
    let k = probs.len() / n;
    let scale = g[0] / T::from_usize(n).unwrap();
    let dl = adj.get_mut(logits, probs.len());
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..k {
            let onehot = if j == label { T::one() } else { T::zero() };
            dl[i * k + j] += scale * (probs[i * k + j] - onehot);
        }
    }
}
