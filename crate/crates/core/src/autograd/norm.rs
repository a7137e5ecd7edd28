use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Running mean/variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub enum BatchNormMode<'a, T> {
    /// Normalize by batch statistics and fold them into the running stats.
    Train(&'a mut RunningStats<T>),
    Eval(&'a RunningStats<T>),
}

impl<T: Scalar> Graph<T> {
    /// Batch normalization over `(N, H, W)` for each channel of `x [N,C,H,W]`.
    ///
    /// Training mode normalizes with the biased batch variance; the running
    /// variance is updated with the unbiased estimate.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Invalid(format!("batch norm eps must be positive, got {eps}")));
        }
        let (n, c, h, w) = self.value(x).dims4()?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::Shape {
                    op: "batch_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let plane = h * w;
        let count = n * plane;
        let xv = self.value(x).data();
        let eps_t = T::lit(eps);
        let (mean, inv_std, batch_stats) = match mode {
            BatchNormMode::Train(stats) => {
                if count <= 1 {
                    return Err(Error::DegenerateBatch);
                }
                let cnt = T::from_usize(count).unwrap();
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for (i, chunk) in xv.chunks(plane).enumerate() {
                    mean[i % c] += chunk.iter().copied().sum::<T>();
                }
                mean.iter_mut().for_each(|m| *m /= cnt);
                for (i, chunk) in xv.chunks(plane).enumerate() {
                    let m = mean[i % c];
                    var[i % c] += chunk.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
                var.iter_mut().for_each(|v| *v /= cnt);
                let mom = T::lit(momentum);
                let unbias = cnt / (cnt - T::one());
                for ch in 0..c {
                    stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * mean[ch];
                    stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * var[ch] * unbias;
                }
                let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
                (mean, inv, true)
            }
            BatchNormMode::Eval(stats) => {
                let inv = stats.var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
                (stats.mean.clone(), inv, false)
            }
        };
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for (i, ((src, xh), dst)) in xv
            .chunks(plane)
            .zip(xhat.chunks_mut(plane))
            .zip(out.chunks_mut(plane))
            .enumerate()
        {
            let ch = i % c;
            let (m, s, ga, be) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
            for ((&v, xo), o) in src.iter().zip(xh.iter_mut()).zip(dst.iter_mut()) {
                *xo = (v - m) * s;
                *o = ga * *xo + be;
            }
        }
        let value = Tensor::from_vec(vec![n, c, h, w], out)?;
        self.push(
            "batch_norm",
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batch_norm_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    g: &[T],
    adj: &mut Adjoints<T>,
) {
    let (n, c, h, w) = graph.value(x).dims4().expect("rank 4");
    let plane = h * w;
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (i, (gc, xc)) in g.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
        let ch = i % c;
        for (&gv, &xv) in gc.iter().zip(xc) {
            sum_g[ch] += gv;
            sum_gx[ch] += gv * xv;
        }
    }
    {
        let dgamma = adj.get_mut(gamma, c);
        dgamma.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s);
    }
    {
        let dbeta = adj.get_mut(beta, c);
        dbeta.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s);
    }
    let gam = graph.value(gamma).data();
    let cnt = T::from_usize(n * plane).unwrap();
    let dx = adj.get_mut(x, g.len());
    for (i, ((dc, gc), xc)) in dx.chunks_mut(plane).zip(g.chunks(plane)).zip(xhat.chunks(plane)).enumerate() {
        let ch = i % c;
        let k = gam[ch] * inv_std[ch];
        if batch_stats {
            let mg = sum_g[ch] / cnt;
            let mgx = sum_gx[ch] / cnt;
            for ((d, &gv), &xv) in dc.iter_mut().zip(gc).zip(xc) {
                *d += k * (gv - mg - xv * mgx);
            }
        } else {
            for (d, &gv) in dc.iter_mut().zip(gc) {
                *d += k * gv;
            }
        }
    }
}
