use rand::Rng;

use super::broadcast::{broadcast_shape, for_each};
use super::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    fn binary(&mut self, name: &'static str, a: Var, b: Var, mul: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or(Error::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = if sa == sb {
            if mul {
                av.iter().zip(bv).map(|(&x, &y)| x * y).collect()
            } else {
                av.iter().zip(bv).map(|(&x, &y)| x + y).collect()
            }
        } else {
            let mut out = vec![T::zero(); out_shape.iter().product()];
            for_each(&out_shape, &sa, &sb, |o, i, j| {
                out[o] = if mul { av[i] * bv[j] } else { av[i] + bv[j] };
            });
            out
        };
        let value = Tensor::from_vec(out_shape, data)?;
        let op = if mul { Op::Mul(a, b) } else { Op::Add(a, b) };
        self.push(name, value, op)
    }

    /// Broadcasting addition.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, false)
    }

    /// Broadcasting (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, true)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * s);
        self.push("scale", value, Op::Scale(x, s))
    }

    /// Inverted dropout over individual elements.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        check_p(p)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let n = self.value(x).numel();
        self.apply_mask(x, sample_mask(n, p, rng), 1)
    }

    /// Inverted dropout that zeroes whole `(n, c)` feature maps.
    pub fn channel_dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        check_p(p)?;
        let (n, c, h, w) = self.value(x).dims4()?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        self.apply_mask(x, sample_mask(n * c, p, rng), h * w)
    }

    fn apply_mask(&mut self, x: Var, mask: Vec<T>, span: usize) -> Result<Var> {
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(span)
            .zip(&mask)
            .flat_map(|(chunk, &m)| chunk.iter().map(move |&v| v * m))
            .collect();
        let value = Tensor::from_vec(xv.shape().to_vec(), data)?;
        self.push("dropout", value, Op::Mask { x, mask, span })
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    Ok(())
}

fn sample_mask<T: Scalar, R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub(super) fn mask_backward<T: Scalar>(x: Var, mask: &[T], span: usize, g: &[T], adj: &mut Adjoints<T>) {
    let dx = adj.get_mut(x, g.len());
    for ((dchunk, gchunk), &m) in dx.chunks_mut(span).zip(g.chunks(span)).zip(mask) {
        dchunk.iter_mut().zip(gchunk).for_each(|(d, &gv)| *d += gv * m);
    }
}

pub(super) fn add_backward<T: Scalar>(
    graph: &Graph<T>,
    out: &Tensor<T>,
    a: Var,
    b: Var,
    g: &[T],
    adj: &mut Adjoints<T>,
) {
    for v in [a, b] {
        let shape = graph.shape(v).to_vec();
        let n = graph.value(v).numel();
        let dv = adj.get_mut(v, n);
        if shape == out.shape() {
            dv.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
        } else {
            for_each(out.shape(), &shape, &shape, |o, i, _| dv[i] += g[o]);
        }
    }
}

pub(super) fn mul_backward<T: Scalar>(
    graph: &Graph<T>,
    out: &Tensor<T>,
    a: Var,
    b: Var,
    g: &[T],
    adj: &mut Adjoints<T>,
) {
    let (sa, sb) = (graph.shape(a).to_vec(), graph.shape(b).to_vec());
    let (av, bv) = (graph.value(a).data(), graph.value(b).data());
    let plain = sa == sb;
    {
        let da = adj.get_mut(a, av.len());
        if plain {
            for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                *d += gv * y;
            }
        } else {
            for_each(out.shape(), &sa, &sb, |o, i, j| da[i] += g[o] * bv[j]);
        }
    }
    let db = adj.get_mut(b, bv.len());
    if plain {
        for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
            *d += gv * x;
        }
    } else {
        for_each(out.shape(), &sa, &sb, |o, i, j| db[j] += g[o] * av[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identities() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 2, 1, 2], &[1.0, -2.0, 3.5, 0.25]));
        let ones = g.constant(Tensor::ones(vec![1, 2, 1, 2]));
        let zeros = g.constant(Tensor::zeros(vec![1, 2, 1, 2]));
        let m = g.mul(x, ones).unwrap();
        let a = g.add(x, zeros).unwrap();
        assert_eq!(g.value(m).data(), g.value(x).data());
        assert_eq!(g.value(a).data(), g.value(x).data());
    }

    #[test]
    fn channel_gate_broadcast() {
        let mut g = Graph::<f64>::new();
        let gate = g.constant(Tensor::full(vec![2, 3, 1, 1], 0.5));
        let map = g.constant(Tensor::full(vec![2, 3, 4, 4], 2.0));
        let y = g.mul(gate, map).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 4, 4]);
        assert!(g.value(y).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn incompatible_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(vec![2, 3]));
        let b = g.constant(Tensor::ones(vec![3, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn broadcast_grad_sum_reduces() {
        let mut g = Graph::<f64>::new();
        let gate = g.leaf(Tensor::full(vec![1, 2, 1, 1], 3.0).with_requires_grad(true));
        let map = g.leaf(Tensor::ones(vec![1, 2, 2, 2]).with_requires_grad(true));
        let y = g.mul(gate, map).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(gate).unwrap(), &[4.0, 4.0]);
        assert!(g.grad(map).unwrap().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::randn(vec![2, 3, 4, 4], 1.0, &mut rng));
        assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(g.channel_dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(g.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn channel_dropout_zeroes_whole_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(vec![4, 8, 3, 3]));
        let y = g.channel_dropout(x, 0.5, true, &mut rng).unwrap();
        for map in g.value(y).data().chunks(9) {
            assert!(map.iter().all(|&v| v == 0.0) || map.iter().all(|&v| v == 2.0));
        }
    }
}
