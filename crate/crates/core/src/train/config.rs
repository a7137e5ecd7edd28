use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::optim::AdamWParams;
use crate::data::{load_cifar_dir, synthetic_dataset, Dataset, Split};
use crate::error::{Error, Result};

/// Where the training and validation images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    /// Seeded gratings; validation uses an independent draw of the same classes.
    Synthetic {
        train: usize,
        val: usize,
        classes: usize,
        seed: u64,
    },
    /// An extracted CIFAR-10 or CIFAR-100 binary directory, optionally subsampled.
    Cifar {
        dir: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
}

impl DataSpec {
    pub fn synthetic(train: usize, classes: usize, seed: u64) -> Self {
        Self::Synthetic {
            train,
            val: (train / 4).max(classes),
            classes,
            seed,
        }
    }

    /// Loads `(train, validation)` datasets.
    pub fn resolve(&self) -> Result<(Dataset, Dataset)> {
        match self {
            Self::Synthetic {
                train,
                val,
                classes,
                seed,
            } => {
                let tr = synthetic_dataset(*train, *classes, *seed)?;
                let mut va = synthetic_dataset(*val, *classes, seed.wrapping_add(0x5eed))?;
                va.split = Split::Test;
                Ok((tr, va))
            }
            Self::Cifar {
                dir,
                train_limit,
                test_limit,
            } => {
                let (kind, tr) = load_cifar_dir(dir, true)?;
                let (_, te) = load_cifar_dir(dir, false)?;
                let limit = |ds: Dataset, n: &Option<usize>| match n {
                    Some(n) => ds.truncate(*n),
                    None => ds,
                };
                let tr = limit(Dataset::new(tr, Split::Train, kind.num_classes())?, train_limit);
                let te = limit(Dataset::new(te, Split::Test, kind.num_classes())?, test_limit);
                Ok((tr, te))
            }
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            Self::Synthetic { classes, .. } => Some(*classes),
            Self::Cifar { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWParams,
    pub seed: u64,
    pub data: DataSpec,
    pub arch_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Validation runs every `eval_every` epochs and always after the last one.
    pub eval_every: usize,
    pub augment: bool,
    /// Cosine decay of the learning rate over the run; off by default.
    pub cosine_lr: bool,
    /// Ends training once the epoch's running train accuracy reaches this value.
    pub stop_at_train_acc: Option<f64>,
    /// Writes measured wall time; when off the column is 0 so seeded runs are byte-identical.
    pub record_wall_time: bool,
    /// Fails fast on any non-finite intermediate value.
    pub checked: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            optimizer: AdamWParams::default(),
            seed: 0,
            data: DataSpec::synthetic(256, 10, 7),
            arch_path: None,
            out_dir: None,
            eval_every: 1,
            augment: false,
            cosine_lr: false,
            stop_at_train_acc: None,
            record_wall_time: true,
            checked: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be at least 1".into()));
        }
        if let Some(a) = self.stop_at_train_acc {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("stop_at_train_acc {a} outside [0, 1]")));
            }
        }
        self.optimizer.validate()
    }

    /// Learning rate for epoch `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.cosine_lr {
            let frac = t as f64 / self.epochs as f64;
            self.optimizer.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        } else {
            self.optimizer.lr
        }
    }
}
