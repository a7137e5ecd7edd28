//! Named parameter storage and the per-pass binding of parameters to graph leaves.

use rand::Rng;

use crate::autograd::{BatchNormMode, Graph, RunningStats, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position in the owning [`ParamStore`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Whether weight decay applies (weights yes; biases, norms and scalars no).
    pub decay: bool,
}

/// Trainable parameters plus non-trainable batch-norm statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    stats: Vec<(String, RunningStats<T>)>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            stats: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor: tensor.with_requires_grad(true),
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    /// Kaiming-normal weight: `std = sqrt(2 / fan_in)`.
    pub fn kaiming<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let std = (2.0 / fan_in as f64).sqrt();
        self.add(name, Tensor::randn(shape, std, rng), true)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape), false)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> usize {
        self.stats.push((name.into(), RunningStats::new(channels)));
        self.stats.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn stats(&self) -> &[(String, RunningStats<T>)] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [(String, RunningStats<T>)] {
        &mut self.stats
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    /// Adds the leaf gradients of one backward pass into the stored parameters.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, bindings: &Bindings) {
        for (id, var) in bindings.iter() {
            if let Some(g) = graph.grad(var) {
                self.params[id.0].tensor.accumulate_grad(g);
            }
        }
    }
}

/// Which graph leaf stands for each parameter in one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    slots: Vec<Option<Var>>,
}

impl Bindings {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    pub fn get(&self, id: ParamId) -> Option<Var> {
        self.slots.get(id.0).copied().flatten()
    }
}

enum StatsAccess<'a, T> {
    Train(&'a mut [(String, RunningStats<T>)]),
    Eval(&'a [(String, RunningStats<T>)]),
}

/// State threaded through one forward pass.
pub struct Ctx<'a, T, R: ?Sized> {
    pub graph: &'a mut Graph<T>,
    params: &'a [Param<T>],
    stats: StatsAccess<'a, T>,
    bindings: Bindings,
    pub rng: &'a mut R,
}

impl<'a, T: Scalar, R: Rng + ?Sized> Ctx<'a, T, R> {
    /// Training pass: batch statistics, dropout active, running stats updated.
    pub fn train(graph: &'a mut Graph<T>, store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        let n = store.params.len();
        Self {
            graph,
            params: &store.params,
            stats: StatsAccess::Train(&mut store.stats),
            bindings: Bindings {
                slots: vec![None; n],
            },
            rng,
        }
    }

    /// Inference pass: running statistics, dropout off, store untouched.
    pub fn eval(graph: &'a mut Graph<T>, store: &'a ParamStore<T>, rng: &'a mut R) -> Self {
        Self {
            graph,
            params: &store.params,
            stats: StatsAccess::Eval(&store.stats),
            bindings: Bindings {
                slots: vec![None; store.params.len()],
            },
            rng,
        }
    }

    pub fn training(&self) -> bool {
        matches!(self.stats, StatsAccess::Train(_))
    }

    /// Graph leaf for a parameter, created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bindings.slots[id.0] {
            return v;
        }
        let v = self.graph.param(&self.params[id.0].tensor);
        self.bindings.slots[id.0] = Some(v);
        v
    }

    pub fn batch_norm(&mut self, x: Var, bn: &BatchNorm) -> Result<Var> {
        let gamma = self.p(bn.gamma);
        let beta = self.p(bn.beta);
        let mode = match &mut self.stats {
            StatsAccess::Train(s) => BatchNormMode::Train(&mut s[bn.stats].1),
            StatsAccess::Eval(s) => BatchNormMode::Eval(&s[bn.stats].1),
        };
        self.graph.batch_norm(x, gamma, beta, mode, BN_EPS, BN_MOMENTUM)
    }

    pub fn into_bindings(self) -> Bindings {
        self.bindings
    }
}

/// Affine batch norm: `gamma` starts at one, `beta` at zero.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: usize,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![channels]), false),
            beta: store.zeros(format!("{name}.beta"), vec![channels]),
            stats: store.add_stats(name, channels),
        }
    }
}
