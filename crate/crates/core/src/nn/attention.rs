//! Channel (squeeze-excitation) and spatial gates, and their scheduled fusion.

use rand::Rng;

use super::config::FusionMode;
use super::params::{Ctx, ParamId, ParamStore};
use crate::autograd::{sigmoid, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedules::ScheduleState;

pub const SE_REDUCTION: usize = 2;
pub const SE_MIN_WIDTH: usize = 4;
pub const SPATIAL_KERNEL: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub channels: usize,
    pub se_reduction: usize,
    pub spatial_kernel: usize,
    pub fusion_mode: FusionMode,
}

impl AttentionSpec {
    pub fn new(channels: usize, fusion_mode: FusionMode) -> Self {
        Self {
            channels,
            se_reduction: SE_REDUCTION,
            spatial_kernel: SPATIAL_KERNEL,
            fusion_mode,
        }
    }

    pub fn bottleneck(&self) -> usize {
        (self.channels / self.se_reduction).max(SE_MIN_WIDTH)
    }
}

/// Scalars applied by the fusion step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionWeights {
    /// Weight on the channel gate (already squashed).
    pub channel: f64,
    /// Weight on the spatial gate (already squashed).
    pub spatial: f64,
    /// Multiplier on the attention branch.
    pub scale: f64,
    /// Residual weight, unless the block learns its own.
    pub residual: f64,
}

impl FusionWeights {
    pub fn from_schedule(s: &ScheduleState) -> Self {
        Self {
            channel: sigmoid(s.alpha),
            spatial: sigmoid(s.beta),
            scale: s.scale,
            residual: s.lambda,
        }
    }
}

/// Gate values substituted for the learned sub-networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForcedGates {
    pub channel: f64,
    pub spatial: f64,
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub spec: AttentionSpec,
    pub(crate) fc1: (ParamId, ParamId),
    pub(crate) fc2: (ParamId, ParamId),
    pub(crate) spatial: (ParamId, ParamId),
}

impl Attention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        spec: AttentionSpec,
        store: &mut ParamStore<T>,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.spatial_kernel.is_multiple_of(2) || spec.se_reduction == 0 {
            return Err(Error::Config(format!("invalid attention spec {spec:?}")));
        }
        let c = spec.channels;
        let r = spec.bottleneck();
        let k = spec.spatial_kernel;
        Ok(Self {
            spec,
            fc1: (
                store.kaiming(format!("{name}.se.fc1.weight"), vec![r, c], c, rng),
                store.zeros(format!("{name}.se.fc1.bias"), vec![r]),
            ),
            fc2: (
                store.kaiming(format!("{name}.se.fc2.weight"), vec![c, r], r, rng),
                store.zeros(format!("{name}.se.fc2.bias"), vec![c]),
            ),
            spatial: (
                store.kaiming(format!("{name}.spatial.weight"), vec![1, 2, k, k], 2 * k * k, rng),
                store.zeros(format!("{name}.spatial.bias"), vec![1]),
            ),
        })
    }

    fn check(&self, ctx: &Ctx<'_, impl Scalar, impl ?Sized>, x: Var) -> Result<(usize, usize, usize, usize)> {
        let dims = ctx.graph.value(x).dims4()?;
        if dims.1 != self.spec.channels {
            return Err(Error::Shape {
                op: "attention",
                lhs: ctx.graph.shape(x).to_vec(),
                rhs: vec![self.spec.channels],
            });
        }
        Ok(dims)
    }

    /// `sigmoid(W2 relu(W1 gap(x)))` as an `[N,C,1,1]` gate.
    pub fn channel_gate<T: Scalar, R: Rng + ?Sized>(&self, ctx: &mut Ctx<'_, T, R>, x: Var) -> Result<Var> {
        let (n, c, _, _) = self.check(ctx, x)?;
        let pooled = ctx.graph.global_avg_pool(x)?;
        let flat = ctx.graph.reshape(pooled, &[n, c])?;
        let (w1, b1) = (ctx.p(self.fc1.0), ctx.p(self.fc1.1));
        let h = ctx.graph.linear(flat, w1, Some(b1))?;
        let h = ctx.graph.relu(h)?;
        let (w2, b2) = (ctx.p(self.fc2.0), ctx.p(self.fc2.1));
        let h = ctx.graph.linear(h, w2, Some(b2))?;
        let gate = ctx.graph.sigmoid(h)?;
        ctx.graph.reshape(gate, &[n, c, 1, 1])
    }

    /// `sigmoid(conv([max_c(x); mean_c(x)]))` as an `[N,1,H,W]` gate.
    pub fn spatial_gate<T: Scalar, R: Rng + ?Sized>(&self, ctx: &mut Ctx<'_, T, R>, x: Var) -> Result<Var> {
        let mx = ctx.graph.channel_max(x)?;
        let mean = ctx.graph.channel_mean(x)?;
        let pooled = ctx.graph.concat_channels(&[mx, mean])?;
        let (w, b) = (ctx.p(self.spatial.0), ctx.p(self.spatial.1));
        let s = ctx.graph.conv2d(pooled, w, Some(b), 1, self.spec.spatial_kernel / 2)?;
        ctx.graph.sigmoid(s)
    }

    /// Scheduled fusion of both gates with a weighted residual.
    ///
    /// `out = scale * (x * gate) + residual * x`, where `gate` blends the
    /// channel and spatial gates by the fusion weights. `residual` overrides
    /// the scheduled residual weight with a graph scalar (learnable mode).
    pub fn dspa<T: Scalar, R: Rng + ?Sized>(
        &self,
        ctx: &mut Ctx<'_, T, R>,
        x: Var,
        weights: &FusionWeights,
        residual: Option<Var>,
        forced: Option<ForcedGates>,
    ) -> Result<Var> {
        let (n, _, h, w) = self.check(ctx, x)?;
        let c = self.spec.channels;
        let (ac, as_) = match forced {
            Some(f) => (
                ctx.graph.constant(crate::tensor::Tensor::full(vec![n, c, 1, 1], T::lit(f.channel))),
                ctx.graph.constant(crate::tensor::Tensor::full(vec![n, 1, h, w], T::lit(f.spatial))),
            ),
            None => (self.channel_gate(ctx, x)?, self.spatial_gate(ctx, x)?),
        };
        let (wc, ws) = match self.spec.fusion_mode {
            FusionMode::Additive => (weights.channel, weights.spatial),
            FusionMode::Normalized => {
                let total = weights.channel + weights.spatial;
                (weights.channel / total, weights.spatial / total)
            }
        };
        let ac = ctx.graph.scale(ac, T::lit(wc))?;
        let as_ = ctx.graph.scale(as_, T::lit(ws))?;
        let gate = ctx.graph.add(ac, as_)?;
        let attended = ctx.graph.mul(x, gate)?;
        let attended = ctx.graph.scale(attended, T::lit(weights.scale))?;
        let skip = match residual {
            Some(lambda) => ctx.graph.mul(x, lambda)?,
            None => ctx.graph.scale(x, T::lit(weights.residual))?,
        };
        ctx.graph.add(attended, skip)
    }
}
