//! A progressive MBConv stack wrapped by one scheduled attention stage.

use rand::Rng;

use super::attention::{Attention, AttentionSpec, ForcedGates, FusionWeights};
use super::config::{channel_progression, FusionMode};
use super::mbconv::{MBConv, MBConvSpec};
use super::params::{Ctx, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedules::{LambdaMode, LAMBDA_INIT};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FastBoostBlockSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub expansions: Vec<usize>,
    pub channel_dropout_p: f64,
    pub attention: AttentionSpec,
    pub lambda_mode: LambdaMode,
}

impl FastBoostBlockSpec {
    pub fn new(c_in: usize, c_out: usize, expansions: &[usize], fusion_mode: FusionMode) -> Self {
        Self {
            c_in,
            c_out,
            expansions: expansions.to_vec(),
            channel_dropout_p: 0.1,
            attention: AttentionSpec::new(c_out, fusion_mode),
            lambda_mode: LambdaMode::Scheduled,
        }
    }

    /// Specs of the stacked MBConv layers.
    pub fn layers(&self) -> Result<Vec<MBConvSpec>> {
        let widths = channel_progression(self.c_out, self.expansions.len())?;
        let mut c = self.c_in;
        Ok(widths
            .iter()
            .zip(&self.expansions)
            .map(|(&w, &e)| {
                let spec = MBConvSpec::new(c, w, e);
                c = w;
                spec
            })
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct FastBoostBlock {
    pub spec: FastBoostBlockSpec,
    pub layers: Vec<MBConv>,
    pub attention: Attention,
    pub lambda: Option<ParamId>,
}

impl FastBoostBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        spec: FastBoostBlockSpec,
        store: &mut ParamStore<T>,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.attention.channels != spec.c_out {
            return Err(Error::Config("attention width must equal the block output width".into()));
        }
        let layers = spec
            .layers()?
            .into_iter()
            .enumerate()
            .map(|(i, s)| MBConv::new(s, store, &format!("{name}.layers.{i}"), rng))
            .collect::<Result<Vec<_>>>()?;
        let attention = Attention::new(spec.attention, store, &format!("{name}.attention"), rng)?;
        let lambda = (spec.lambda_mode == LambdaMode::Learnable)
            .then(|| store.add(format!("{name}.lambda"), Tensor::scalar(T::lit(LAMBDA_INIT)), false));
        Ok(Self {
            spec,
            layers,
            attention,
            lambda,
        })
    }

    /// The MBConv layers alone, with channel dropout between consecutive layers.
    pub fn stack_forward<T: Scalar, R: Rng + ?Sized>(&self, ctx: &mut Ctx<'_, T, R>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                let training = ctx.training();
                h = ctx.graph.channel_dropout(h, self.spec.channel_dropout_p, training, ctx.rng)?;
            }
            h = layer.forward(ctx, h)?;
        }
        Ok(h)
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        ctx: &mut Ctx<'_, T, R>,
        x: Var,
        weights: &FusionWeights,
    ) -> Result<Var> {
        self.forward_with(ctx, x, weights, None)
    }

    /// Forward pass with the attention gates optionally pinned to constants.
    pub fn forward_with<T: Scalar, R: Rng + ?Sized>(
        &self,
        ctx: &mut Ctx<'_, T, R>,
        x: Var,
        weights: &FusionWeights,
        forced: Option<ForcedGates>,
    ) -> Result<Var> {
        let y = self.stack_forward(ctx, x)?;
        let residual = match self.lambda {
            Some(id) => {
                let l = ctx.p(id);
                Some(ctx.graph.reshape(l, &[1, 1, 1, 1])?)
            }
            None => None,
        };
        self.attention.dspa(ctx, y, weights, residual, forced)
    }
}
