//! Inverted-residual bottleneck: expand, depthwise, linear projection.

use rand::Rng;

use super::params::{BatchNorm, Ctx, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MBConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub expansion: usize,
    pub kernel: usize,
    pub use_skip: bool,
}

impl MBConvSpec {
    /// 3x3 depthwise kernel; identity skip iff the widths agree.
    pub fn new(c_in: usize, c_out: usize, expansion: usize) -> Self {
        Self {
            c_in,
            c_out,
            expansion,
            kernel: 3,
            use_skip: c_in == c_out,
        }
    }

    pub fn hidden(&self) -> usize {
        self.c_in * self.expansion
    }

    /// Expansion 1 has no expand stage.
    pub fn has_expand(&self) -> bool {
        self.expansion > 1
    }
}

#[derive(Clone, Debug)]
pub struct MBConv {
    pub spec: MBConvSpec,
    expand: Option<(ParamId, BatchNorm)>,
    depthwise: (ParamId, BatchNorm),
    project: (ParamId, BatchNorm),
}

impl MBConv {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        spec: MBConvSpec,
        store: &mut ParamStore<T>,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.expansion == 0 || spec.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("invalid MBConv spec {spec:?}")));
        }
        let hidden = spec.hidden();
        let k = spec.kernel;
        let expand = spec.has_expand().then(|| {
            (
                store.kaiming(format!("{name}.expand.weight"), vec![hidden, spec.c_in, 1, 1], spec.c_in, rng),
                BatchNorm::new(store, &format!("{name}.expand_bn"), hidden),
            )
        });
        let depthwise = (
            store.kaiming(format!("{name}.depthwise.weight"), vec![hidden, 1, k, k], k * k, rng),
            BatchNorm::new(store, &format!("{name}.depthwise_bn"), hidden),
        );
        let project = (
            store.kaiming(format!("{name}.project.weight"), vec![spec.c_out, hidden, 1, 1], hidden, rng),
            BatchNorm::new(store, &format!("{name}.project_bn"), spec.c_out),
        );
        Ok(Self {
            spec,
            expand,
            depthwise,
            project,
        })
    }

    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.expand
            .iter()
            .map(|(w, _)| *w)
            .chain([self.depthwise.0, self.project.0])
            .collect()
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(&self, ctx: &mut Ctx<'_, T, R>, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.spec.c_in {
            return Err(Error::Shape {
                op: "mbconv",
                lhs: shape,
                rhs: vec![self.spec.c_in],
            });
        }
        let mut h = x;
        if let Some((w, bn)) = &self.expand {
            let w = ctx.p(*w);
            h = ctx.graph.conv2d(h, w, None, 1, 0)?;
            h = ctx.batch_norm(h, bn)?;
            h = ctx.graph.silu(h)?;
        }
        let dw = ctx.p(self.depthwise.0);
        h = ctx.graph.depthwise_conv2d(h, dw, 1, self.spec.kernel / 2)?;
        h = ctx.batch_norm(h, &self.depthwise.1)?;
        h = ctx.graph.silu(h)?;
        let pw = ctx.p(self.project.0);
        h = ctx.graph.conv2d(h, pw, None, 1, 0)?;
        h = ctx.batch_norm(h, &self.project.1)?;
        if self.spec.use_skip {
            h = ctx.graph.add(h, x)?;
        }
        Ok(h)
    }
}
