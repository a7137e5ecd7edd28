use super::conv::out_size;
use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Spatial mean per channel, `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let denom = T::from_usize(h * w).unwrap();
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() / denom)
            .collect();
        let value = Tensor::from_vec(vec![n, c, 1, 1], data)?;
        self.push("global_avg_pool", value, Op::GlobalAvgPool(x))
    }

    /// Window maxima; ties resolve to the first element in row-major order.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if k == 0 || k > h || k > w {
            return Err(Error::Geometry {
                op: "max_pool2d",
                detail: format!("window {k} does not fit a {h}x{w} input"),
            });
        }
        let ho = out_size("max_pool2d", h, k, stride, 0)?;
        let wo = out_size("max_pool2d", w, k, stride, 0)?;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for map in 0..n * c {
            let base = map * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for i in 0..k {
                        for j in 0..k {
                            let idx = base + (oy * stride + i) * w + ox * stride + j;
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_vec(vec![n, c, ho, wo], out)?;
        self.push("max_pool2d", value, Op::MaxPool { x, argmax })
    }

    /// Per-location maximum over channels, `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * plane);
        let mut argmax = Vec::with_capacity(n * plane);
        for img in 0..n {
            for p in 0..plane {
                let mut best = img * c * plane + p;
                for ch in 1..c {
                    let idx = (img * c + ch) * plane + p;
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::from_vec(vec![n, 1, h, w], out)?;
        self.push("channel_max", value, Op::ChannelMax { x, argmax })
    }

    /// Per-location mean over channels, `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let xv = self.value(x).data();
        let denom = T::from_usize(c).unwrap();
        let mut out = vec![T::zero(); n * plane];
        for img in 0..n {
            let dst = &mut out[img * plane..(img + 1) * plane];
            for ch in 0..c {
                let src = &xv[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d /= denom);
        }
        let value = Tensor::from_vec(vec![n, 1, h, w], out)?;
        self.push("channel_mean", value, Op::ChannelMean(x))
    }
}

pub(super) fn global_avg_pool_backward<T: Scalar>(graph: &Graph<T>, x: Var, g: &[T], adj: &mut Adjoints<T>) {
    let xt = graph.value(x);
    let (_, _, h, w) = xt.dims4().expect("rank 4");
    let denom = T::from_usize(h * w).unwrap();
    let dx = adj.get_mut(x, xt.numel());
    for (chunk, &gv) in dx.chunks_mut(h * w).zip(g) {
        let share = gv / denom;
        chunk.iter_mut().for_each(|d| *d += share);
    }
}

/// Routes each output gradient to the input element it was selected from.
pub(super) fn index_backward<T: Scalar>(graph: &Graph<T>, x: Var, argmax: &[usize], g: &[T], adj: &mut Adjoints<T>) {
    let dx = adj.get_mut(x, graph.value(x).numel());
    for (&idx, &gv) in argmax.iter().zip(g) {
        dx[idx] += gv;
    }
}

pub(super) fn channel_mean_backward<T: Scalar>(graph: &Graph<T>, x: Var, g: &[T], adj: &mut Adjoints<T>) {
    let xt = graph.value(x);
    let (n, c, h, w) = xt.dims4().expect("rank 4");
    let plane = h * w;
    let denom = T::from_usize(c).unwrap();
    let dx = adj.get_mut(x, xt.numel());
    for img in 0..n {
        let gi = &g[img * plane..(img + 1) * plane];
        for ch in 0..c {
            let dst = &mut dx[(img * c + ch) * plane..(img * c + ch + 1) * plane];
            dst.iter_mut().zip(gi).for_each(|(d, &gv)| *d += gv / denom);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_mean() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
        let c = g.constant(Tensor::full(vec![2, 3, 4, 5], 1.75));
        let y = g.global_avg_pool(c).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn max_pool_picks_max() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn max_pool_ties_route_to_first() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![1, 1, 4, 4], 3.0).with_requires_grad(true));
        let y = g.max_pool2d(x, 2, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 3.0));
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        let expected: Vec<f64> = (0..16)
            .map(|i| if (i / 4) % 2 == 0 && i % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(grad, &expected[..]);
    }

    #[test]
    fn max_pool_window_too_large() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(vec![1, 1, 1, 1]));
        assert!(matches!(g.max_pool2d(x, 2, 2), Err(Error::Geometry { .. })));
    }

    #[test]
    fn channel_reductions() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![1, 2, 1, 2], vec![1.0, 5.0, 3.0, -1.0]).unwrap());
        let mx = g.channel_max(x).unwrap();
        let mn = g.channel_mean(x).unwrap();
        assert_eq!(g.value(mx).data(), &[3.0, 5.0]);
        assert_eq!(g.value(mn).data(), &[2.0, 2.0]);
    }
}
