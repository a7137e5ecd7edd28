use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// One AdamW update of `params` in place; `step` counts from 1.
///
/// Weight decay is decoupled: `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    weight_decay: f64,
    betas: (f64, f64),
    eps: f64,
    step: u64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(Error::Shape {
            op: "adamw_step",
            lhs: vec![n],
            rhs: vec![grads.len(), m.len(), v.len()],
        });
    }
    if step == 0 {
        return Err(Error::Invalid("optimizer steps count from 1".into()));
    }
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powf(step as f64);
    let c2 = 1.0 - b2.powf(step as f64);
    let (b1t, b2t) = (T::lit(b1), T::lit(b2));
    let (ob1, ob2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
    let (c1, c2) = (T::lit(c1), T::lit(c2));
    let (lr, wd, eps) = (T::lit(lr), T::lit(weight_decay), T::lit(eps));
    for i in 0..n {
        let g = grads[i];
        m[i] = b1t * m[i] + ob1 * g;
        v[i] = b2t * v[i] + ob2 * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
    }
    Ok(())
}

/// AdamW state for every tensor of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub hp: AdamWParams,
    pub step: u64,
    /// First and second moments, aligned with the store's parameters.
    pub moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(hp: AdamWParams, store: &ParamStore<T>) -> Result<Self> {
        hp.validate()?;
        let moments = store
            .params()
            .iter()
            .map(|p| (vec![T::zero(); p.tensor.numel()], vec![T::zero(); p.tensor.numel()]))
            .collect();
        Ok(Self { hp, step: 0, moments })
    }

    /// Updates every parameter holding a gradient. Decay applies only to
    /// parameters flagged for it (weights, not biases or norm affines).
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.moments.len() != store.len() {
            return Err(Error::Invalid("optimizer state does not match the parameter store".into()));
        }
        self.step += 1;
        for (p, (m, v)) in store.params_mut().iter_mut().zip(&mut self.moments) {
            let wd = if p.decay { self.hp.weight_decay } else { 0.0 };
            let Some(grad) = p.tensor.grad().map(<[T]>::to_vec) else {
                continue;
            };
            adamw_step(
                p.tensor.data_mut(),
                &grad,
                m,
                v,
                lr,
                wd,
                (self.hp.beta1, self.hp.beta2),
                self.hp.eps,
                self.step,
            )?;
        }
        Ok(())
    }
}
