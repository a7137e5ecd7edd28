//! Cross-correlation (no kernel flip), im2col + GEMM for dense kernels and a
//! direct loop for depthwise kernels.

use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

pub(crate) fn out_size(op: &'static str, input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry {
            op,
            detail: "stride must be positive".into(),
        });
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Geometry {
            op,
            detail: format!("kernel {kernel} larger than padded input {padded}"),
        });
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn cols_len(&self) -> usize {
        self.c * self.kh * self.kw * self.ho * self.wo
    }

    /// Input row feeding output row `o` at kernel row `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad).filter(|&i| i < limit)
    }
}

fn im2col<T: Scalar>(img: &[T], g: &Geom, cols: &mut [T]) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    match g.src(oy, i, g.h) {
                        None => line.iter_mut().for_each(|v| *v = T::zero()),
                        Some(iy) => {
                            let src = &img[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = g.src(ox, j, g.w).map_or(T::zero(), |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geom, img: &mut [T]) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, i, g.h) else { continue };
                    let dst = &mut img[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    for ox in 0..g.wo {
                        if let Some(ix) = g.src(ox, j, g.w) {
                            dst[ix] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// 2-D cross-correlation of `x [N,C,H,W]` with `w [Cout,C,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (cout, cin, kh, kw) = self.value(w).dims4().map_err(|_| Error::Shape {
            op: "conv2d",
            lhs: self.shape(x).to_vec(),
            rhs: self.shape(w).to_vec(),
        })?;
        if cin != c {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::Shape {
                    op: "conv2d bias",
                    lhs: vec![cout],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let geom = Geom {
            c,
            h,
            w: wd,
            kh,
            kw,
            ho: out_size("conv2d", h, kh, stride, pad)?,
            wo: out_size("conv2d", wd, kw, stride, pad)?,
            stride,
            pad,
        };
        let plane = geom.ho * geom.wo;
        let k = c * kh * kw;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); n * cout * plane];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); geom.cols_len()] };
        for img in 0..n {
            let src = &xv[img * c * h * wd..(img + 1) * c * h * wd];
            let b_mat = if geom.is_pointwise() {
                src
            } else {
                im2col(src, &geom, &mut cols);
                &cols
            };
            matmul(cout, k, plane, wv, false, b_mat, false, T::zero(), &mut out[img * cout * plane..(img + 1) * cout * plane]);
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for chunk in out.chunks_mut(plane).enumerate() {
                let bias = bv[chunk.0 % cout];
                chunk.1.iter_mut().for_each(|v| *v += bias);
            }
        }
        let value = Tensor::from_vec(vec![n, cout, geom.ho, geom.wo], out)?;
        self.push("conv2d", value, Op::Conv2d { x, w, b, stride, pad })
    }

    /// Per-channel cross-correlation of `x [N,C,H,W]` with `w [C,1,kh,kw]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let bad = || Error::Shape {
            op: "depthwise_conv2d",
            lhs: self.shape(x).to_vec(),
            rhs: self.shape(w).to_vec(),
        };
        let (wc, one, kh, kw) = self.value(w).dims4().map_err(|_| bad())?;
        if wc != c || one != 1 {
            return Err(bad());
        }
        let geom = Geom {
            c,
            h,
            w: wd,
            kh,
            kw,
            ho: out_size("depthwise_conv2d", h, kh, stride, pad)?,
            wo: out_size("depthwise_conv2d", wd, kw, stride, pad)?,
            stride,
            pad,
        };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let plane_in = h * wd;
        let plane_out = geom.ho * geom.wo;
        let mut out = vec![T::zero(); n * c * plane_out];
        for (map, dst) in out.chunks_mut(plane_out).enumerate() {
            let ch = map % c;
            let src = &xv[map * plane_in..(map + 1) * plane_in];
            let kern = &wv[ch * kh * kw..(ch + 1) * kh * kw];
            if geom.stride == 1 {
                for_each_tap(&geom, |t, o, i, len| axpy(&mut dst[o..o + len], kern[t], &src[i..i + len]));
            } else {
                depthwise_plane(src, kern, &geom, |o, i, kv, xs| dst[o] += kv * xs[i]);
            }
        }
        let value = Tensor::from_vec(vec![n, c, geom.ho, geom.wo], out)?;
        self.push("depthwise_conv2d", value, Op::Depthwise { x, w, stride, pad })
    }
}

/// Visits every (output index, input index, kernel value) triple of one plane.
/// Stride-1 taps as contiguous runs: `f(tap, out_offset, in_offset, len)`
/// pairs an output row segment with the input segment kernel tap `tap` reads.
#[inline]
fn for_each_tap(g: &Geom, mut f: impl FnMut(usize, usize, usize, usize)) {
    for i in 0..g.kh {
        let oy_lo = g.pad.saturating_sub(i);
        let oy_hi = g.ho.min((g.h + g.pad).saturating_sub(i));
        for j in 0..g.kw {
            let tap = i * g.kw + j;
            let ox_lo = g.pad.saturating_sub(j);
            let ox_hi = g.wo.min((g.w + g.pad).saturating_sub(j));
            if ox_lo >= ox_hi {
                continue;
            }
            for oy in oy_lo..oy_hi {
                let iy = oy + i - g.pad;
                f(tap, oy * g.wo + ox_lo, iy * g.w + ox_lo + j - g.pad, ox_hi - ox_lo);
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += a * s);
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn depthwise_plane<T: Scalar>(src: &[T], kern: &[T], g: &Geom, mut f: impl FnMut(usize, usize, T, &[T])) {
    for i in 0..g.kh {
        for j in 0..g.kw {
            let kv = kern[i * g.kw + j];
            for oy in 0..g.ho {
                let Some(iy) = g.src(oy, i, g.h) else { continue };
                for ox in 0..g.wo {
                    if let Some(ix) = g.src(ox, j, g.w) {
                        f(oy * g.wo + ox, iy * g.w + ix, kv, src);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
    g: &[T],
    adj: &mut Adjoints<T>,
) {
    let xt = graph.value(x);
    let wt = graph.value(w);
    let (n, c, h, wd) = xt.dims4().expect("rank 4");
    let (cout, _, kh, kw) = wt.dims4().expect("rank 4");
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let geom = Geom { c, h, w: wd, kh, kw, ho, wo, stride, pad };
    let plane = ho * wo;
    let k = c * kh * kw;
    let img_len = c * h * wd;

    if let Some(b) = b {
        let db = adj.get_mut(b, cout);
        for (i, chunk) in g.chunks(plane).enumerate() {
            db[i % cout] += chunk.iter().copied().sum::<T>();
        }
    }

    let pointwise = geom.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); geom.cols_len()] };
    {
        let dw = adj.get_mut(w, wt.numel());
        for img in 0..n {
            let src = &xt.data()[img * img_len..(img + 1) * img_len];
            let gy = &g[img * cout * plane..(img + 1) * cout * plane];
            let b_mat = if pointwise {
                src
            } else {
                im2col(src, &geom, &mut cols);
                &cols
            };
            // dW (cout x k) += dY (cout x plane) * cols^T (plane x k)
            matmul(cout, plane, k, gy, false, b_mat, true, T::one(), dw);
        }
    }

    let dx = adj.get_mut(x, xt.numel());
    let mut dcols = vec![T::zero(); if pointwise { 0 } else { k * plane }];
    for img in 0..n {
        let gy = &g[img * cout * plane..(img + 1) * cout * plane];
        let dst = &mut dx[img * img_len..(img + 1) * img_len];
        if pointwise {
            // dX (c x plane) += W^T (c x cout) * dY (cout x plane)
            matmul(k, cout, plane, wt.data(), true, gy, false, T::one(), dst);
        } else {
            matmul(k, cout, plane, wt.data(), true, gy, false, T::zero(), &mut dcols);
            col2im(&dcols, &geom, dst);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn depthwise_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    w: Var,
    stride: usize,
    pad: usize,
    g: &[T],
    adj: &mut Adjoints<T>,
) {
    let xt = graph.value(x);
    let wt = graph.value(w);
    let (_, c, h, wd) = xt.dims4().expect("rank 4");
    let (_, _, kh, kw) = wt.dims4().expect("rank 4");
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let geom = Geom { c, h, w: wd, kh, kw, ho, wo, stride, pad };
    let plane_in = h * wd;
    let plane_out = ho * wo;
    let ksz = kh * kw;

    {
        let dw = adj.get_mut(w, wt.numel());
        for (map, gy) in g.chunks(plane_out).enumerate() {
            let ch = map % c;
            let src = &xt.data()[map * plane_in..(map + 1) * plane_in];
            let dwc = &mut dw[ch * ksz..(ch + 1) * ksz];
            if stride == 1 {
                for_each_tap(&geom, |t, o, i, len| dwc[t] += dot(&gy[o..o + len], &src[i..i + len]));
                continue;
            }
            for i in 0..kh {
                for j in 0..kw {
                    let mut acc = T::zero();
                    for oy in 0..ho {
                        let Some(iy) = geom.src(oy, i, h) else { continue };
                        for ox in 0..wo {
                            if let Some(ix) = geom.src(ox, j, wd) {
                                acc += gy[oy * wo + ox] * src[iy * wd + ix];
                            }
                        }
                    }
                    dwc[i * kw + j] += acc;
                }
            }
        }
    }

    let dx = adj.get_mut(x, xt.numel());
    for (map, gy) in g.chunks(plane_out).enumerate() {
        let ch = map % c;
        let kern = &wt.data()[ch * ksz..(ch + 1) * ksz];
        let dst = &mut dx[map * plane_in..(map + 1) * plane_in];
        if stride == 1 {
            for_each_tap(&geom, |t, o, i, len| axpy(&mut dst[i..i + len], kern[t], &gy[o..o + len]));
        } else {
            depthwise_plane(gy, kern, &geom, |o, i, kv, gys| dst[i] += kv * gys[o]);
        }
    }
}
