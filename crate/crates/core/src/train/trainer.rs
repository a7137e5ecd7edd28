use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, MetricsSummary, RngMark, ScheduleMark};
use super::config::TrainConfig;
use super::metrics::{write_metrics, MetricsRow};
use super::optim::AdamW;
use crate::autograd::Graph;
use crate::data::{batches, epoch_seed, Dataset};
use crate::error::{Error, Result};
use crate::nn::{ArchConfig, Model};
use crate::scalar::Scalar;
use crate::schedules::ScheduleState;
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.fbckpt";
pub const FINAL_CHECKPOINT: &str = "final.fbckpt";

const EVAL_BATCH: usize = 256;

/// Summed cross-entropy and number of correct top-1 predictions for `logits [N,K]`.
///
/// Ties in the arg-max go to the lowest class index.
pub fn score<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, usize)> {
    let (n, k) = match logits.shape() {
        &[n, k] if n == labels.len() && k > 0 => (n, k),
        s => {
            return Err(Error::Shape {
                op: "score",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            })
        }
    };
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &label) in logits.data().chunks(k).zip(labels).take(n) {
        if label >= k {
            return Err(Error::Label { label, classes: k });
        }
        let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let (best, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        correct += usize::from(best == label);
    }
    Ok((loss, correct))
}

/// Mean loss and top-1 accuracy in inference mode.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &Dataset, sched: &ScheduleState) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    for batch in batches::<T>(ds, EVAL_BATCH, false, 0, false)? {
        let logits = model.predict(&batch.images, sched)?;
        let (l, c) = score(&logits, &batch.labels)?;
        loss += l;
        correct += c;
    }
    let n = ds.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
    pub rows: Vec<MetricsRow>,
    /// Epoch and validation accuracy of the best evaluation (earliest on ties).
    pub best: Option<(usize, f64)>,
    pub stopped_early: bool,
}

fn summary(rows: &[MetricsRow], best: Option<(usize, f64)>) -> MetricsSummary {
    let last = rows.last();
    MetricsSummary {
        epochs_completed: rows.len(),
        train_loss: last.map(|r| r.train_loss),
        train_acc: last.map(|r| r.train_acc),
        val_loss: rows.iter().rev().find_map(|r| r.val_loss),
        val_acc: rows.iter().rev().find_map(|r| r.val_acc),
        best_epoch: best.map(|b| b.0),
        best_val_acc: best.map(|b| b.1),
    }
}

/// Trains a freshly initialized model.
///
/// Every batch of epoch `t` sees the schedule state for that epoch. Metrics
/// are written after every epoch and checkpoints on each new best validation
/// accuracy and at the end, when `cfg.out_dir` is set. `on_epoch` observes
/// each finished row.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    arch: &ArchConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
    mut on_epoch: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    arch.validate()?;
    for ds in [train_ds, val_ds] {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if ds.num_classes != arch.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the architecture predicts {}",
                ds.num_classes, arch.num_classes
            )));
        }
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::<T>::build(arch, &mut rng)?;
    let mut optimizer = AdamW::new(cfg.optimizer, model.store())?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut stopped_early = false;
    let start = Instant::now();
    let sched_cfg = arch.schedule_config();

    for t in 0..cfg.epochs {
        let sched = ScheduleState::for_epoch(t, cfg.epochs, sched_cfg)?;
        let lr = cfg.lr_at(t);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let data = batches::<T>(train_ds, cfg.batch_size, true, epoch_seed(cfg.seed, t), cfg.augment)?;
        for (b, batch) in data.enumerate() {
            let mut graph = if cfg.checked { Graph::checked() } else { Graph::new() };
            let x = graph.constant(batch.images);
            let fwd = model.forward(&mut graph, x, &sched, true, &mut rng)?;
            let loss = graph.softmax_cross_entropy(fwd.logits, &batch.labels)?;
            let loss_value = graph.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: t, batch: b });
            }
            let (_, c) = score(graph.value(fwd.logits), &batch.labels)?;
            loss_sum += loss_value * batch.labels.len() as f64;
            correct += c;
            graph.backward(loss)?;
            model.zero_grad();
            model.accumulate_grads(&graph, &fwd);
            optimizer.step(model.store_mut(), lr)?;
        }
        let n = train_ds.len() as f64;
        let train_acc = correct as f64 / n;
        let last = t + 1 == cfg.epochs;
        let stop = cfg.stop_at_train_acc.is_some_and(|a| train_acc >= a);
        let (val_loss, val_acc) = if (t + 1) % cfg.eval_every == 0 || last || stop {
            let (l, a) = evaluate(&model, val_ds, &sched)?;
            (Some(l), Some(a))
        } else {
            (None, None)
        };
        let row = MetricsRow {
            epoch: t,
            train_loss: loss_sum / n,
            train_acc,
            val_loss,
            val_acc,
            alpha_t: sched.alpha,
            beta_t: sched.beta,
            lambda_t: sched.lambda,
            scale_t: sched.scale,
            wall_seconds: if cfg.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        on_epoch(&row);
        rows.push(row);
        let improved = match (val_acc, best) {
            (Some(a), Some((_, b))) => a > b,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            best = Some((t, val_acc.expect("checked above")));
        }
        if let Some(dir) = &cfg.out_dir {
            write_metrics(&dir.join(METRICS_FILE), &rows)?;
            let mark = ScheduleMark {
                t: t + 1,
                total: cfg.epochs,
            };
            let ckpt = || {
                Checkpoint::capture(
                    &model,
                    Some(&optimizer),
                    mark,
                    RngMark::of(cfg.seed, &rng),
                    summary(&rows, best),
                )
            };
            if improved {
                ckpt().save(&dir.join(BEST_CHECKPOINT))?;
            }
            if last || stop {
                ckpt().save(&dir.join(FINAL_CHECKPOINT))?;
            }
        }
        if stop {
            stopped_early = !last;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        rows,
        best,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_logits_score_perfectly() {
        let labels = [2, 0, 1, 3];
        let mut data = vec![0.0f64; 16];
        for (i, &l) in labels.iter().enumerate() {
            data[i * 4 + l] = 10.0;
        }
        let logits = Tensor::from_vec(vec![4, 4], data).unwrap();
        let (loss, correct) = score(&logits, &labels).unwrap();
        assert_eq!(correct, 4);
        assert!(loss / 4.0 < 1e-3);
    }

    #[test]
    fn uniform_logits_cost_log_k() {
        let logits = Tensor::<f64>::zeros(vec![2, 5]);
        let (loss, _) = score(&logits, &[1, 4]).unwrap();
        assert!((loss / 2.0 - 5f64.ln()).abs() < 1e-12);
        assert!(score(&logits, &[1, 5]).is_err());
        assert!(score(&logits, &[1]).is_err());
    }
}
