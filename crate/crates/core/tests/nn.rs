use fastboost::analysis::count_params;
use fastboost::autograd::{sigmoid, Graph};
use fastboost::nn::{
    ArchConfig, Attention, AttentionSpec, Ctx, FastBoostBlock, FastBoostBlockSpec, ForcedGates, FusionMode,
    FusionWeights, MBConv, MBConvSpec, Model, ParamStore,
};
use fastboost::schedules::{LambdaMode, ScheduleConfig, ScheduleState};
use fastboost::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn zero_matching(store: &mut ParamStore<f64>, needle: &str) {
    for p in store.params_mut() {
        if p.name.contains(needle) {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn input(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

#[test]
fn mbconv_zero_projection_is_identity() {
    let mut store = ParamStore::<f64>::new();
    let layer = MBConv::new(MBConvSpec::new(8, 8, 1), &mut store, "m", &mut rng(0)).unwrap();
    // a zero BN gamma after the projection kills the residual branch
    zero_matching(&mut store, "project_bn.gamma");
    let x = input(vec![2, 8, 5, 5], 1);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut r = rng(2);
    let mut ctx = Ctx::train(&mut g, &mut store, &mut r);
    let y = layer.forward(&mut ctx, xv).unwrap();
    assert_eq!(g.value(y).max_abs_diff(&x), 0.0);
}

#[test]
fn mbconv_shapes_and_count() {
    let mut store = ParamStore::<f64>::new();
    let layer = MBConv::new(MBConvSpec::new(32, 8, 2), &mut store, "m", &mut rng(0)).unwrap();
    // expand 32*64, BN 128, depthwise 9*64, BN 128, project 64*8, BN 16
    assert_eq!(store.num_scalars(), 2048 + 128 + 576 + 128 + 512 + 16);
    assert_eq!(store.num_scalars(), 3408);
    let mut g = Graph::new();
    let xv = g.constant(input(vec![2, 32, 6, 6], 1));
    let mut r = rng(2);
    let mut ctx = Ctx::train(&mut g, &mut store, &mut r);
    let y = layer.forward(&mut ctx, xv).unwrap();
    assert_eq!(g.shape(y), &[2, 8, 6, 6]);
    assert!(!layer.spec.use_skip);
}

fn attention(c: usize, zero: bool) -> (ParamStore<f64>, Attention) {
    let mut store = ParamStore::new();
    let a = Attention::new(AttentionSpec::new(c, FusionMode::Additive), &mut store, "a", &mut rng(3)).unwrap();
    if zero {
        zero_matching(&mut store, "");
    }
    (store, a)
}

#[test]
fn zeroed_gates_are_one_half() {
    let (mut store, a) = attention(16, true);
    let mut g = Graph::new();
    let xv = g.constant(input(vec![2, 16, 6, 6], 4));
    let mut r = rng(0);
    let mut ctx = Ctx::train(&mut g, &mut store, &mut r);
    let ac = a.channel_gate(&mut ctx, xv).unwrap();
    let as_ = a.spatial_gate(&mut ctx, xv).unwrap();
    assert_eq!(g.shape(ac), &[2, 16, 1, 1]);
    assert_eq!(g.shape(as_), &[2, 1, 6, 6]);
    assert!(g.value(ac).data().iter().all(|&v| v == 0.5));
    assert!(g.value(as_).data().iter().all(|&v| v == 0.5));
}

#[test]
fn gates_are_bounded_and_invariant() {
    let (store, a) = attention(8, false);
    let x = input(vec![1, 8, 5, 5], 5);
    // reverse the spatial positions of every channel, and separately the channel order
    let mut spatial_perm = x.clone();
    for chunk in spatial_perm.data_mut().chunks_mut(25) {
        chunk.reverse();
    }
    let mut channel_perm = x.clone();
    for c in 0..8 {
        let src = &x.data()[(7 - c) * 25..(8 - c) * 25];
        channel_perm.data_mut()[c * 25..(c + 1) * 25].copy_from_slice(src);
    }
    let gates = |t: &Tensor<f64>| {
        let mut g = Graph::new();
        let xv = g.constant(t.clone());
        let mut r = rng(0);
        let mut ctx = Ctx::eval(&mut g, &store, &mut r);
        let ac = a.channel_gate(&mut ctx, xv).unwrap();
        let as_ = a.spatial_gate(&mut ctx, xv).unwrap();
        (g.value(ac).clone(), g.value(as_).clone())
    };
    let (c0, s0) = gates(&x);
    let (c1, _) = gates(&spatial_perm);
    let (_, s2) = gates(&channel_perm);
    for v in c0.data().iter().chain(s0.data()) {
        assert!(*v > 0.0 && *v < 1.0);
    }
    assert!(c0.max_abs_diff(&c1) < 1e-12);
    assert!(s0.max_abs_diff(&s2) < 1e-12);
}

#[test]
fn dspa_with_half_gates_at_start() {
    let (mut store, a) = attention(8, true);
    let x = input(vec![2, 8, 4, 4], 6);
    let sched = ScheduleState::at(0, 10, ScheduleConfig::default()).unwrap();
    let weights = FusionWeights::from_schedule(&sched);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut r = rng(0);
    let mut ctx = Ctx::train(&mut g, &mut store, &mut r);
    let y = a.dspa(&mut ctx, xv, &weights, None, None).unwrap();
    let k: f64 = 0.5 * 0.5 * (sigmoid(0.6) + sigmoid(0.4)) + 0.5;
    assert!((k - 0.8111).abs() < 1e-4);
    let expected = x.map(|v| k * v);
    assert_eq!(g.shape(y), x.shape());
    assert!(g.value(y).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn dspa_is_increasing_in_residual_weight() {
    let (store, a) = attention(4, false);
    let x = input(vec![1, 4, 4, 4], 7).map(f64::abs);
    let run = |lambda: f64| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut r = rng(0);
        let mut ctx = Ctx::eval(&mut g, &store, &mut r);
        let w = FusionWeights {
            channel: 0.6,
            spatial: 0.4,
            scale: 1.0,
            residual: lambda,
        };
        let y = a.dspa(&mut ctx, xv, &w, None, None).unwrap();
        g.value(y).clone()
    };
    let mut prev = run(0.0);
    for i in 1..=5 {
        let next = run(i as f64 * 0.2);
        assert!(next.data().iter().zip(prev.data()).all(|(n, p)| n >= p));
        prev = next;
    }
}

fn tiny_block(c_in: usize, c_out: usize, lambda_mode: LambdaMode) -> (ParamStore<f64>, FastBoostBlock) {
    let mut store = ParamStore::new();
    let mut spec = FastBoostBlockSpec::new(c_in, c_out, &[2, 2, 2, 2], FusionMode::Additive);
    spec.lambda_mode = lambda_mode;
    let block = FastBoostBlock::new(spec, &mut store, "b", &mut rng(8)).unwrap();
    (store, block)
}

#[test]
fn block_shape_trace() {
    let (mut store, block) = tiny_block(32, 64, LambdaMode::Scheduled);
    let widths: Vec<_> = block.layers.iter().map(|l| (l.spec.c_in, l.spec.c_out)).collect();
    assert_eq!(widths, vec![(32, 8), (8, 16), (16, 32), (32, 64)]);
    let mut g = Graph::new();
    let xv = g.constant(input(vec![2, 32, 8, 8], 9));
    let mut r = rng(0);
    let mut ctx = Ctx::train(&mut g, &mut store, &mut r);
    let sched = ScheduleState::at(3, 10, ScheduleConfig::default()).unwrap();
    let y = block.forward(&mut ctx, xv, &FusionWeights::from_schedule(&sched)).unwrap();
    assert_eq!(g.shape(y), &[2, 64, 8, 8]);
}

#[test]
fn block_eval_is_deterministic() {
    let (store, block) = tiny_block(16, 32, LambdaMode::Learnable);
    let x = input(vec![2, 16, 4, 4], 10);
    let w = FusionWeights::from_schedule(&ScheduleState::final_state(ScheduleConfig::default()));
    let run = |seed| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut r = rng(seed);
        let mut ctx = Ctx::eval(&mut g, &store, &mut r);
        let y = block.forward(&mut ctx, xv, &w).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(1), run(2));
}

#[test]
fn static_reduction_matches_stack() {
    let (store, block) = tiny_block(16, 32, LambdaMode::Scheduled);
    let x = input(vec![2, 16, 4, 4], 11);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let mut r = rng(0);
    let mut ctx = Ctx::eval(&mut g, &store, &mut r);
    let stack = block.stack_forward(&mut ctx, xv).unwrap();
    let w = FusionWeights {
        channel: 1.0,
        spatial: 0.0,
        scale: 1.0,
        residual: 0.0,
    };
    let forced = ForcedGates {
        channel: 1.0,
        spatial: 0.0,
    };
    let y = block.forward_with(&mut ctx, xv, &w, Some(forced)).unwrap();
    let diff = g.value(y).max_abs_diff(g.value(stack));
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn channel_dropout_preserves_expectation() {
    let x = Tensor::<f64>::ones(vec![1, 4, 2, 2]);
    let trials = 10_000;
    let mut total = vec![0.0; 16];
    for seed in 0..trials {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = g.channel_dropout(xv, 0.1, true, &mut rng(seed)).unwrap();
        total.iter_mut().zip(g.value(y).data()).for_each(|(t, v)| *t += v);
    }
    for t in total {
        let mean = t / trials as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }
}

#[test]
fn build_tiny_and_base() {
    let tiny = Model::<f64>::build(&ArchConfig::tiny(10), &mut rng(1)).unwrap();
    let sched = ScheduleState::final_state(ScheduleConfig::default());
    let logits = tiny.predict(&input(vec![2, 3, 32, 32], 2), &sched).unwrap();
    assert_eq!(logits.shape(), &[2, 10]);
    assert!(logits.all_finite());
    let base = Model::<f32>::build(&ArchConfig::base(100), &mut rng(1)).unwrap();
    let logits = base.predict(&input(vec![1, 3, 32, 32], 3).cast(), &sched).unwrap();
    assert_eq!(logits.shape(), &[1, 100]);
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::<f64>::build(&ArchConfig::tiny(10), &mut rng(5)).unwrap();
    let b = Model::<f64>::build(&ArchConfig::tiny(10), &mut rng(5)).unwrap();
    let c = Model::<f64>::build(&ArchConfig::tiny(10), &mut rng(6)).unwrap();
    assert_eq!(a.store(), b.store());
    assert_ne!(a.store(), c.store());
}

#[test]
fn bad_input_geometry() {
    let m = Model::<f64>::build(&ArchConfig::tiny(10), &mut rng(1)).unwrap();
    let sched = ScheduleState::final_state(ScheduleConfig::default());
    assert!(m.predict(&input(vec![1, 3, 30, 30], 2), &sched).is_err());
    assert!(m.predict(&input(vec![1, 1, 32, 32], 2), &sched).is_err());
}

#[test]
fn count_matches_built_model() {
    let mut configs = vec![ArchConfig::tiny(10), ArchConfig::base(10), ArchConfig::base(100)];
    for p in [&[1, 1, 1, 1][..], &[1, 2, 3, 4], &[1, 2, 4, 8], &[1, 2, 4], &[2, 4, 8], &[3], &[1, 2, 2, 3, 4, 6]] {
        configs.push(ArchConfig::with_expansions(p, 10));
    }
    let mut learnable = ArchConfig::tiny(10);
    learnable.lambda_mode = LambdaMode::Learnable;
    configs.push(learnable);
    let mut custom = ArchConfig::tiny(7);
    custom.stem_out = 16;
    custom.stage_channels = vec![32, 64];
    custom.expansions = vec![vec![1, 3, 2, 5], vec![4, 1, 1, 2]];
    custom.classifier_hidden = 40;
    configs.push(custom);
    for cfg in configs {
        let model = Model::<f32>::build(&cfg, &mut rng(0)).unwrap();
        assert_eq!(count_params(&cfg).unwrap().params(), model.num_parameters() as u64, "{cfg:?}");
    }
}
