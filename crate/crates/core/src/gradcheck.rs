//! Finite-difference gradient checks in 64-bit precision.
//!
//! Each check compares reverse-mode gradients with central differences,
//! `rel = |analytic - numeric| / max(|analytic|, |numeric|, floor)`.
//! The floor keeps rounding noise in gradients that are exactly zero from
//! counting as error. Coordinates whose one-sided slopes disagree, and keep
//! disagreeing at a ten times smaller step, sit on a kink (ReLU, max
//! selection) and are skipped rather than scored.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BatchNormMode, Graph, RunningStats, Var};
use crate::error::Result;
use crate::nn::{ArchConfig, Model};
use crate::schedules::{LambdaMode, ScheduleConfig, ScheduleState};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Relative disagreement of one-sided slopes that marks a kink.
    pub kink: f64,
    /// Coordinates checked per tensor; `None` checks all of them.
    pub per_tensor: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            kink: 1e-3,
            per_tensor: None,
        }
    }
}

/// Result for one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub kinks: usize,
    pub worst: Option<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub results: Vec<CheckResult>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let _ = writeln!(
                out,
                "{} {:<36} max_rel_err={:.3e} checked={} kinks={}{}",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.max_rel_err,
                r.checked,
                r.kinks,
                r.worst.as_ref().map(|w| format!(" worst={w}")).unwrap_or_default()
            );
        }
        out
    }
}

/// A scalar function of several tensors with a reverse-mode gradient.
pub trait Objective {
    fn tensors(&mut self) -> Vec<(String, &mut [f64])>;
    fn loss(&mut self) -> Result<f64>;
    /// Gradients aligned with [`Objective::tensors`].
    fn gradients(&mut self) -> Result<Vec<Vec<f64>>>;
}

fn perturbed<O: Objective + ?Sized>(obj: &mut O, t: usize, i: usize, delta: f64) -> Result<f64> {
    let old = {
        let mut ts = obj.tensors();
        let v = &mut ts[t].1[i];
        let old = *v;
        *v = old + delta;
        old
    };
    let loss = obj.loss();
    obj.tensors()[t].1[i] = old;
    loss
}

pub fn check_objective<O: Objective + ?Sized, R: Rng + ?Sized>(
    name: &str,
    obj: &mut O,
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<CheckResult> {
    let grads = obj.gradients()?;
    let base = obj.loss()?;
    let sizes: Vec<(String, usize)> = obj.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let h = opts.step;
    let mut result = CheckResult {
        name: name.into(),
        max_rel_err: 0.0,
        checked: 0,
        kinks: 0,
        worst: None,
        passed: true,
    };
    for (t, (tname, len)) in sizes.iter().enumerate() {
        let coords: Vec<usize> = match opts.per_tensor {
            Some(k) if k < *len => sample(rng, *len, k).into_vec(),
            _ => (0..*len).collect(),
        };
        for i in coords {
            let plus = perturbed(obj, t, i, h)?;
            let minus = perturbed(obj, t, i, -h)?;
            let mut numeric = (plus - minus) / (2.0 * h);
            let (right, left) = ((plus - base) / h, (base - minus) / h);
            if (right - left).abs() > opts.kink * numeric.abs().max(1.0) {
                // curvature shrinks the one-sided gap with the step; a kink does not
                let small = h / 10.0;
                let right2 = (perturbed(obj, t, i, small)? - base) / small;
                let left2 = (base - perturbed(obj, t, i, -small)?) / small;
                if (right2 - left2).abs() > 0.5 * (right - left).abs() {
                    result.kinks += 1;
                    continue;
                }
                // a switch may sit between the two steps; trust the finer one
                numeric = (right2 + left2) / 2.0;
            }
            let analytic = grads[t][i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
            result.checked += 1;
            if rel > result.max_rel_err || rel.is_nan() {
                result.max_rel_err = rel;
                result.worst = Some(format!("{tname}[{i}] analytic={analytic:.6e} numeric={numeric:.6e}"));
            }
        }
    }
    result.passed = result.max_rel_err < opts.tolerance && result.checked > 0;
    Ok(result)
}

type OpFn = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// A graph-building closure over leaf tensors, reduced to a scalar by a
/// fixed random projection so every output element matters.
pub struct OpObjective {
    names: Vec<String>,
    inputs: Vec<Tensor<f64>>,
    f: Box<OpFn>,
    seed: u64,
}

impl OpObjective {
    pub fn new(
        inputs: Vec<(&str, Tensor<f64>)>,
        seed: u64,
        f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        let (names, inputs) = inputs.into_iter().map(|(n, t)| (n.to_string(), t)).unzip();
        Self {
            names,
            inputs,
            f: Box::new(f),
            seed,
        }
    }

    fn build(&self) -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self
            .inputs
            .iter()
            .map(|t| g.leaf(t.clone().with_requires_grad(true)))
            .collect();
        let out = (self.f)(&mut g, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let proj = g.constant(Tensor::randn(g.shape(out).to_vec(), 1.0, &mut rng));
        let weighted = g.mul(out, proj)?;
        let loss = g.sum(weighted)?;
        Ok((g, vars, loss))
    }
}

impl Objective for OpObjective {
    fn tensors(&mut self) -> Vec<(String, &mut [f64])> {
        self.names
            .iter()
            .cloned()
            .zip(self.inputs.iter_mut().map(|t| t.data_mut()))
            .collect()
    }

    fn loss(&mut self) -> Result<f64> {
        let (g, _, loss) = self.build()?;
        Ok(g.value(loss).data()[0])
    }

    fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
        let (mut g, vars, loss) = self.build()?;
        g.backward(loss)?;
        Ok(vars
            .iter()
            .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).numel()], <[f64]>::to_vec))
            .collect())
    }
}

/// Cross-entropy of a whole network in training mode with fixed dropout masks.
pub struct ModelObjective {
    pub model: Model<f64>,
    pub input: Tensor<f64>,
    pub labels: Vec<usize>,
    pub sched: ScheduleState,
    pub seed: u64,
}

impl ModelObjective {
    fn run(&mut self, backward: bool) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut g = Graph::new();
        let x = g.leaf(self.input.clone().with_requires_grad(true));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // training mode also folds batch statistics into the running ones; restore them
        let stats = self.model.store().stats().to_vec();
        let fwd = self.model.forward(&mut g, x, &self.sched, true, &mut rng)?;
        self.model
            .store_mut()
            .stats_mut()
            .iter_mut()
            .zip(stats)
            .for_each(|(s, old)| *s = old);
        let loss = g.softmax_cross_entropy(fwd.logits, &self.labels)?;
        let value = g.value(loss).data()[0];
        if !backward {
            return Ok((value, None));
        }
        g.backward(loss)?;
        let mut grads = vec![g.grad(x).expect("input requires grad").to_vec()];
        for (i, p) in self.model.store().params().iter().enumerate() {
            let bound = fwd.bindings.iter().find(|(id, _)| id.index() == i).map(|(_, v)| v);
            grads.push(match bound.and_then(|v| g.grad(v)) {
                Some(gr) => gr.to_vec(),
                None => vec![0.0; p.tensor.numel()],
            });
        }
        Ok((value, Some(grads)))
    }
}

impl Objective for ModelObjective {
    fn tensors(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![("input".to_string(), self.input.data_mut())];
        for p in self.model.store_mut().params_mut() {
            out.push((p.name.clone(), p.tensor.data_mut()));
        }
        out
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(self.run(false)?.0)
    }

    fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
        Ok(self.run(true)?.1.expect("requested"))
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Values bounded away from zero so ReLU kinks stay out of reach.
fn randn_off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    randn(shape, seed).map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

/// One check per differentiable primitive.
pub fn op_objectives() -> Vec<(&'static str, OpObjective)> {
    let x4 = |s| randn(&[2, 3, 5, 5], s);
    vec![
        (
            "conv2d 3x3 pad 1",
            OpObjective::new(
                vec![("x", x4(1)), ("w", randn(&[4, 3, 3, 3], 2)), ("b", randn(&[4], 3))],
                10,
                |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
            ),
        ),
        (
            "conv2d 3x3 stride 2",
            OpObjective::new(vec![("x", x4(4)), ("w", randn(&[2, 3, 3, 3], 5))], 11, |g, v| {
                g.conv2d(v[0], v[1], None, 2, 0)
            }),
        ),
        (
            "conv2d 1x1",
            OpObjective::new(vec![("x", x4(6)), ("w", randn(&[5, 3, 1, 1], 7))], 12, |g, v| {
                g.conv2d(v[0], v[1], None, 1, 0)
            }),
        ),
        (
            "depthwise 3x3 pad 1",
            OpObjective::new(vec![("x", x4(8)), ("w", randn(&[3, 1, 3, 3], 9))], 13, |g, v| {
                g.depthwise_conv2d(v[0], v[1], 1, 1)
            }),
        ),
        (
            "depthwise 3x3 stride 2",
            OpObjective::new(vec![("x", x4(14)), ("w", randn(&[3, 1, 3, 3], 15))], 16, |g, v| {
                g.depthwise_conv2d(v[0], v[1], 2, 1)
            }),
        ),
        (
            "batch_norm train",
            OpObjective::new(
                vec![("x", x4(17)), ("gamma", randn(&[3], 18)), ("beta", randn(&[3], 19))],
                20,
                |g, v| {
                    let mut stats = RunningStats::new(3);
                    g.batch_norm(v[0], v[1], v[2], BatchNormMode::Train(&mut stats), 1e-5, 0.1)
                },
            ),
        ),
        (
            "batch_norm eval",
            OpObjective::new(
                vec![("x", x4(21)), ("gamma", randn(&[3], 22)), ("beta", randn(&[3], 23))],
                24,
                |g, v| {
                    let stats = RunningStats {
                        mean: vec![0.1, -0.2, 0.3],
                        var: vec![0.5, 1.5, 2.0],
                    };
                    g.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval(&stats), 1e-5, 0.1)
                },
            ),
        ),
        ("silu", OpObjective::new(vec![("x", x4(25))], 26, |g, v| g.silu(v[0]))),
        ("sigmoid", OpObjective::new(vec![("x", x4(27))], 28, |g, v| g.sigmoid(v[0]))),
        ("relu", OpObjective::new(vec![("x", randn_off_zero(&[2, 3, 5, 5], 29))], 30, |g, v| g.relu(v[0]))),
        ("global_avg_pool", OpObjective::new(vec![("x", x4(31))], 32, |g, v| g.global_avg_pool(v[0]))),
        (
            "max_pool2d",
            OpObjective::new(vec![("x", randn(&[2, 3, 6, 6], 33))], 34, |g, v| g.max_pool2d(v[0], 2, 2)),
        ),
        (
            "linear",
            OpObjective::new(
                vec![("x", randn(&[3, 6], 35)), ("w", randn(&[4, 6], 36)), ("b", randn(&[4], 37))],
                38,
                |g, v| g.linear(v[0], v[1], Some(v[2])),
            ),
        ),
        (
            "add broadcast",
            OpObjective::new(vec![("a", x4(39)), ("b", randn(&[1, 3, 1, 5], 40))], 41, |g, v| g.add(v[0], v[1])),
        ),
        (
            "mul broadcast",
            OpObjective::new(vec![("a", x4(42)), ("b", randn(&[2, 1, 5, 5], 43))], 44, |g, v| g.mul(v[0], v[1])),
        ),
        ("scale", OpObjective::new(vec![("x", x4(45))], 46, |g, v| g.scale(v[0], -1.7))),
        ("channel_max", OpObjective::new(vec![("x", x4(47))], 48, |g, v| g.channel_max(v[0]))),
        ("channel_mean", OpObjective::new(vec![("x", x4(49))], 50, |g, v| g.channel_mean(v[0]))),
        (
            "concat_channels",
            OpObjective::new(vec![("a", x4(51)), ("b", randn(&[2, 2, 5, 5], 52))], 53, |g, v| {
                g.concat_channels(&[v[0], v[1]])
            }),
        ),
        (
            "reshape",
            OpObjective::new(vec![("x", x4(54))], 55, |g, v| g.reshape(v[0], &[6, 25])),
        ),
        ("sum", OpObjective::new(vec![("x", x4(56))], 57, |g, v| g.sum(v[0]))),
        (
            "softmax_cross_entropy",
            OpObjective::new(vec![("logits", randn(&[4, 5], 58))], 59, |g, v| {
                g.softmax_cross_entropy(v[0], &[0, 3, 4, 1])
            }),
        ),
        (
            "dropout",
            OpObjective::new(vec![("x", x4(60))], 61, |g, v| {
                g.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(62))
            }),
        ),
        (
            "channel_dropout",
            OpObjective::new(vec![("x", x4(63))], 64, |g, v| {
                g.channel_dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(65))
            }),
        ),
    ]
}

/// The small end-to-end network: 4 classes, 8x8 inputs, widths 8/16/16.
pub fn miniature_config(lambda_mode: LambdaMode) -> ArchConfig {
    let mut cfg = ArchConfig::tiny(4);
    cfg.stem_out = 8;
    cfg.stage_channels = vec![8, 16, 16];
    cfg.classifier_hidden = 16;
    cfg.lambda_mode = lambda_mode;
    cfg
}

pub fn model_objective(config: &ArchConfig, input_hw: usize, batch: usize, seed: u64) -> Result<ModelObjective> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::build(config, &mut rng)?;
    let input = Tensor::randn(vec![batch, 3, input_hw, input_hw], 1.0, &mut rng);
    let labels = (0..batch).map(|i| i % config.num_classes).collect();
    let sched = ScheduleState::at(1, 3, config.schedule_config())?;
    Ok(ModelObjective {
        model,
        input,
        labels,
        sched,
        seed: seed + 1,
    })
}

/// Every primitive plus the miniature network, each coordinate checked.
/// `full` adds a sampled check of the Tiny network at 32x32.
pub fn run_suite(full: bool) -> Result<GradReport> {
    let opts = GradCheckOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut report = GradReport::default();
    for (name, mut obj) in op_objectives() {
        report.results.push(check_objective(name, &mut obj, &opts, &mut rng)?);
    }
    for (name, mode) in [
        ("miniature network", LambdaMode::Scheduled),
        ("miniature network, learnable lambda", LambdaMode::Learnable),
    ] {
        let mut obj = model_objective(&miniature_config(mode), 8, 2, 3)?;
        report.results.push(check_objective(name, &mut obj, &opts, &mut rng)?);
    }
    if full {
        let sampled = GradCheckOptions {
            per_tensor: Some(3),
            ..opts
        };
        let mut obj = model_objective(&ArchConfig::tiny(10), 32, 2, 5)?;
        obj.sched = ScheduleState::final_state(ScheduleConfig::default());
        report
            .results
            .push(check_objective("tiny network, sampled", &mut obj, &sampled, &mut rng)?);
    }
    Ok(report)
}
