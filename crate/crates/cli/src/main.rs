//! Command-line front end: train, evaluate, analyze, gradient-check, export configs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fastboost::analysis::{count_macs, parse_patterns, sweep, sweep_csv};
use fastboost::gradcheck::run_suite;
use fastboost::nn::ArchConfig;
use fastboost::schedules::ScheduleState;
use fastboost::train::{evaluate, train, AdamWParams, Checkpoint, DataSpec, TrainConfig, FINAL_CHECKPOINT, METRICS_FILE};

#[derive(Parser)]
#[command(name = "fastboost", version, about = "Train and inspect FastBoost image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics plus checkpoints
    Train(TrainArgs),
    /// Report loss and accuracy of a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CIFAR binary directory, or `synthetic`
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 256)]
        synthetic_size: usize,
        #[arg(long, default_value_t = 7)]
        data_seed: u64,
        /// Evaluate on at most this many test images
        #[arg(long)]
        test_limit: Option<usize>,
    },
    /// Count parameters and multiply-accumulates
    Analyze {
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        input_size: usize,
        /// Comma-separated expansion patterns, e.g. `1-2-4-8,2-4-6-8`; prints CSV
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Finite-difference check of every op and a small network
    Gradcheck {
        /// Also check sampled coordinates of the Tiny network
        #[arg(long)]
        full: bool,
    },
    /// Write the canonical configuration of a model variant
    ExportConfig {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Output file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Tiny,
    Base,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Architecture JSON; defaults to the Tiny variant
    #[arg(long)]
    arch: Option<PathBuf>,
    /// CIFAR binary directory, or `synthetic`
    #[arg(long, default_value = "synthetic")]
    data: String,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Random flips and reflect-padded crops
    #[arg(long)]
    augment: bool,
    /// Cosine learning-rate decay
    #[arg(long)]
    cosine_lr: bool,
    /// Stop once an epoch's train accuracy reaches this fraction
    #[arg(long)]
    stop_at_train_acc: Option<f64>,
    /// Write 0 instead of elapsed time so seeded runs are byte-identical
    #[arg(long)]
    no_wall_time: bool,
    #[arg(long, default_value_t = 256)]
    synthetic_size: usize,
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
}

fn load_arch(path: Option<&Path>) -> Result<ArchConfig> {
    match path {
        Some(p) => ArchConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ArchConfig::tiny(10)),
    }
}

fn data_spec(data: &str, classes: usize, size: usize, seed: u64, train: Option<usize>, test: Option<usize>) -> DataSpec {
    if data == "synthetic" {
        DataSpec::synthetic(size, classes, seed)
    } else {
        DataSpec::Cifar {
            dir: PathBuf::from(data),
            train_limit: train,
            test_limit: test,
        }
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let arch = load_arch(args.arch.as_deref())?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        optimizer: AdamWParams {
            lr: args.lr,
            weight_decay: args.weight_decay,
            ..AdamWParams::default()
        },
        seed: args.seed,
        data: data_spec(
            &args.data,
            arch.num_classes,
            args.synthetic_size,
            args.data_seed,
            args.train_limit,
            args.test_limit,
        ),
        arch_path: args.arch.clone(),
        out_dir: Some(args.out.clone()),
        eval_every: args.eval_every,
        augment: args.augment,
        cosine_lr: args.cosine_lr,
        stop_at_train_acc: args.stop_at_train_acc,
        record_wall_time: !args.no_wall_time,
        checked: false,
    };
    let (train_ds, val_ds) = cfg.data.resolve()?;
    println!(
        "training {} parameters on {} images, validating on {}",
        count_macs(&arch, 32)?.params(),
        train_ds.len(),
        val_ds.len()
    );
    let outcome = train::<f32>(&cfg, &arch, &train_ds, &val_ds, |r| {
        let val = match (r.val_loss, r.val_acc) {
            (Some(l), Some(a)) => format!(" val_loss={l:.4} val_acc={a:.4}"),
            _ => String::new(),
        };
        println!(
            "epoch {:>3} train_loss={:.4} train_acc={:.4}{val} scale={:.3}",
            r.epoch, r.train_loss, r.train_acc, r.scale_t
        );
    })?;
    if let Some((epoch, acc)) = outcome.best {
        println!("best val_acc {acc:.4} at epoch {epoch}");
    }
    println!("metrics: {}", args.out.join(METRICS_FILE).display());
    println!("checkpoint: {}", args.out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

fn run_eval(checkpoint: &Path, data: &str, size: usize, seed: u64, test_limit: Option<usize>) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let model = ckpt.model()?;
    let classes = ckpt.arch.num_classes;
    let ds = if data == "synthetic" {
        let (_, val) = DataSpec::synthetic(size, classes, seed).resolve()?;
        val
    } else {
        let (_, test) = data_spec(data, classes, size, seed, Some(0), test_limit).resolve()?;
        if test.num_classes != classes {
            bail!("checkpoint predicts {classes} classes but the data has {}", test.num_classes);
        }
        test
    };
    let sched = ScheduleState::final_state(ckpt.arch.schedule_config());
    let (loss, acc) = evaluate(&model, &ds, &sched)?;
    println!("images={} loss={loss:.6} accuracy={acc:.6}", ds.len());
    Ok(())
}

fn run_analyze(arch: Option<&Path>, input_size: usize, patterns: Option<&str>) -> Result<()> {
    let base = load_arch(arch)?;
    match patterns {
        Some(p) => {
            let configs = parse_patterns(p)?
                .into_iter()
                .map(|pattern| {
                    let mut cfg = ArchConfig::with_expansions(&pattern, base.num_classes);
                    cfg.stem_out = base.stem_out;
                    cfg.stage_channels = base.stage_channels.clone();
                    cfg.classifier_hidden = base.classifier_hidden;
                    cfg.lambda_mode = base.lambda_mode;
                    cfg.validate().map(|_| cfg)
                })
                .collect::<fastboost::Result<Vec<_>>>()?;
            print!("{}", sweep_csv(&sweep(&configs, input_size)?));
        }
        None => print!("{}", count_macs(&base, input_size)?.render()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => run_train(args)?,
        Command::Eval {
            checkpoint,
            data,
            synthetic_size,
            data_seed,
            test_limit,
        } => run_eval(&checkpoint, &data, synthetic_size, data_seed, test_limit)?,
        Command::Analyze {
            arch,
            input_size,
            sweep,
        } => run_analyze(arch.as_deref(), input_size, sweep.as_deref())?,
        Command::Gradcheck { full } => {
            let report = run_suite(full)?;
            print!("{}", report.render());
            return Ok(report.passed());
        }
        Command::ExportConfig { variant, classes, out } => {
            let cfg = match variant {
                VariantArg::Tiny => ArchConfig::tiny(classes),
                VariantArg::Base => ArchConfig::base(classes),
            };
            cfg.validate()?;
            match out {
                Some(path) => cfg.save(&path)?,
                None => println!("{}", cfg.to_json()?),
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

