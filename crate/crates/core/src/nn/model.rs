//! The full network: stem, attention blocks with pooling, MLP classifier.

use rand::Rng;

use super::attention::FusionWeights;
use super::block::{FastBoostBlock, FastBoostBlockSpec};
use super::config::ArchConfig;
use super::params::{BatchNorm, Bindings, Ctx, ParamId, ParamStore};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedules::ScheduleState;
use crate::tensor::Tensor;

pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ArchConfig,
    store: ParamStore<T>,
    stem: (ParamId, BatchNorm),
    blocks: Vec<FastBoostBlock>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

/// Result of one forward pass.
pub struct Forward {
    pub logits: Var,
    pub bindings: Bindings,
}

impl<T: Scalar> Model<T> {
    /// Allocates and initializes every parameter from `rng`.
    pub fn build<R: Rng + ?Sized>(config: &ArchConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let stem = (
            store.kaiming("stem.conv.weight", vec![config.stem_out, INPUT_CHANNELS, 3, 3], INPUT_CHANNELS * 9, rng),
            BatchNorm::new(&mut store, "stem.bn", config.stem_out),
        );
        let mut blocks = Vec::with_capacity(config.stage_channels.len());
        for (i, ((&c_in, &c_out), exps)) in config
            .block_inputs()
            .iter()
            .zip(&config.stage_channels)
            .zip(&config.expansions)
            .enumerate()
        {
            let mut spec = FastBoostBlockSpec::new(c_in, c_out, exps, config.fusion_mode);
            spec.channel_dropout_p = config.channel_dropout_p;
            spec.lambda_mode = config.lambda_mode;
            blocks.push(FastBoostBlock::new(spec, &mut store, &format!("blocks.{i}"), rng)?);
        }
        let feat = *config.stage_channels.last().expect("validated");
        let hidden = config.classifier_hidden;
        let fc1 = (
            store.kaiming("classifier.fc1.weight", vec![hidden, feat], feat, rng),
            store.zeros("classifier.fc1.bias", vec![hidden]),
        );
        let fc2 = (
            store.kaiming("classifier.fc2.weight", vec![config.num_classes, hidden], hidden, rng),
            store.zeros("classifier.fc2.bias", vec![config.num_classes]),
        );
        Ok(Self {
            config: config.clone(),
            store,
            stem,
            blocks,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn blocks(&self) -> &[FastBoostBlock] {
        &self.blocks
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Current learnable residual weights, one per block (empty when scheduled).
    pub fn learned_lambdas(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .filter_map(|b| b.lambda)
            .map(|id| self.store.get(id).tensor.data()[0].to_f64().unwrap_or(f64::NAN))
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let pools = 1usize << (self.config.stage_channels.len() - 1);
        match shape {
            &[_, c, h, w] if c == INPUT_CHANNELS && h >= pools && w >= pools && h % pools == 0 && w % pools == 0 => Ok(()),
            _ => Err(Error::Geometry {
                op: "model input",
                detail: format!("expected [N, 3, H, W] with H, W divisible by {pools}, got {shape:?}"),
            }),
        }
    }

    /// Records the forward pass of `x` on `graph`.
    ///
    /// Training mode normalizes with batch statistics (updating the running
    /// ones) and samples dropout masks from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        graph: &mut Graph<T>,
        x: Var,
        sched: &ScheduleState,
        training: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        if !training {
            return self.forward_eval(graph, x, sched, rng);
        }
        self.check_input(graph.shape(x))?;
        let Self {
            store,
            stem,
            blocks,
            fc1,
            fc2,
            config,
        } = self;
        let mut ctx = Ctx::train(graph, store, rng);
        let logits = run(&mut ctx, config, stem, blocks, *fc1, *fc2, x, sched)?;
        Ok(Forward {
            logits,
            bindings: ctx.into_bindings(),
        })
    }

    /// Inference pass; never mutates the model.
    pub fn forward_eval<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph<T>,
        x: Var,
        sched: &ScheduleState,
        rng: &mut R,
    ) -> Result<Forward> {
        self.check_input(graph.shape(x))?;
        let mut ctx = Ctx::eval(graph, &self.store, rng);
        let logits = run(&mut ctx, &self.config, &self.stem, &self.blocks, self.fc1, self.fc2, x, sched)?;
        Ok(Forward {
            logits,
            bindings: ctx.into_bindings(),
        })
    }

    /// Eval-mode logits for a batch.
    pub fn predict(&self, x: &Tensor<T>, sched: &ScheduleState) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let xv = graph.constant(x.clone());
        // eval mode draws no randomness
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let out = self.forward_eval(&mut graph, xv, sched, &mut rng)?;
        Ok(graph.value(out.logits).clone())
    }

    pub fn accumulate_grads(&mut self, graph: &Graph<T>, forward: &Forward) {
        self.store.accumulate_grads(graph, &forward.bindings);
    }

    pub fn zero_grad(&mut self) {
        self.store.zero_grad();
    }
}

#[allow(clippy::too_many_arguments)]
fn run<T: Scalar, R: Rng + ?Sized>(
    ctx: &mut Ctx<'_, T, R>,
    config: &ArchConfig,
    stem: &(ParamId, BatchNorm),
    blocks: &[FastBoostBlock],
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
    x: Var,
    sched: &ScheduleState,
) -> Result<Var> {
    let weights = FusionWeights::from_schedule(sched);
    let w = ctx.p(stem.0);
    let mut h = ctx.graph.conv2d(x, w, None, 1, 1)?;
    h = ctx.batch_norm(h, &stem.1)?;
    h = ctx.graph.silu(h)?;
    for (i, block) in blocks.iter().enumerate() {
        h = block.forward(ctx, h, &weights)?;
        h = if i + 1 < blocks.len() {
            ctx.graph.max_pool2d(h, 2, 2)?
        } else {
            ctx.graph.global_avg_pool(h)?
        };
    }
    let n = ctx.graph.shape(h)[0];
    let feat = ctx.graph.shape(h)[1];
    h = ctx.graph.reshape(h, &[n, feat])?;
    let (w1, b1) = (ctx.p(fc1.0), ctx.p(fc1.1));
    h = ctx.graph.linear(h, w1, Some(b1))?;
    h = ctx.graph.silu(h)?;
    let training = ctx.training();
    h = ctx.graph.dropout(h, config.classifier_dropout, training, ctx.rng)?;
    let (w2, b2) = (ctx.p(fc2.0), ctx.p(fc2.1));
    ctx.graph.linear(h, w2, Some(b2))
}
