//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `FBCKPT01`, a little-endian `u64` header length,
//! a UTF-8 JSON header (architecture, tensor manifest, optimizer, schedule,
//! RNG position and metrics), then raw little-endian tensor payloads in
//! manifest order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWParams};
use crate::error::{Error, Result};
use crate::nn::{ArchConfig, Model};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"FBCKPT01";
pub const FORMAT_VERSION: u32 = 1;

const RUNNING_MEAN: &str = "running_mean";
const RUNNING_VAR: &str = "running_var";
const ADAM_M: &str = "adam_m";
const ADAM_V: &str = "adam_v";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset from the start of the payload section.
    pub offset: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub params: AdamWParams,
    pub step: u64,
}

/// Schedule position: the next epoch `t` of `total`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleMark {
    pub t: usize,
    pub total: usize,
}

/// A ChaCha8 stream identified by its seed and word position.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngMark {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngMark {
    pub fn of(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSummary {
    pub epochs_completed: usize,
    pub train_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    arch: ArchConfig,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerState>,
    schedule: ScheduleMark,
    rng: RngMark,
    metrics: MetricsSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub arch: ArchConfig,
    /// Parameters, batch-norm statistics and optimizer moments, in file order.
    pub tensors: Vec<(String, Vec<usize>, Vec<T>)>,
    pub optimizer: Option<OptimizerState>,
    pub schedule: ScheduleMark,
    pub rng: RngMark,
    pub metrics: MetricsSummary,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(
        model: &Model<T>,
        optimizer: Option<&AdamW<T>>,
        schedule: ScheduleMark,
        rng: RngMark,
        metrics: MetricsSummary,
    ) -> Self {
        let store = model.store();
        let mut tensors = Vec::new();
        for p in store.params() {
            tensors.push((p.name.clone(), p.tensor.shape().to_vec(), p.tensor.data().to_vec()));
        }
        for (name, s) in store.stats() {
            let c = vec![s.mean.len()];
            tensors.push((format!("{name}.{RUNNING_MEAN}"), c.clone(), s.mean.clone()));
            tensors.push((format!("{name}.{RUNNING_VAR}"), c, s.var.clone()));
        }
        if let Some(opt) = optimizer {
            for (p, (m, v)) in store.params().iter().zip(&opt.moments) {
                let shape = p.tensor.shape().to_vec();
                tensors.push((format!("{}.{ADAM_M}", p.name), shape.clone(), m.clone()));
                tensors.push((format!("{}.{ADAM_V}", p.name), shape, v.clone()));
            }
        }
        Self {
            arch: model.config().clone(),
            tensors,
            optimizer: optimizer.map(|o| OptimizerState {
                params: o.hp,
                step: o.step,
            }),
            schedule,
            rng,
            metrics,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|(name, shape, data)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    dtype: T::DTYPE.into(),
                    offset,
                };
                offset += (data.len() * T::BYTES) as u64;
                e
            })
            .collect();
        let header = Header {
            format_version: FORMAT_VERSION,
            arch: self.arch.clone(),
            tensors: entries,
            optimizer: self.optimizer,
            schedule: self.schedule,
            rng: self.rng,
            metrics: self.metrics.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &self.tensors {
            for &v in data {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing FBCKPT01 magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("header length {len} exceeds file size {}", bytes.len())))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        header.arch.validate()?;
        let payload = &bytes[header_end..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.dtype != T::DTYPE {
                return Err(bad(format!("tensor {} is {}, expected {}", e.name, e.dtype, T::DTYPE)));
            }
            if e.offset != expected {
                return Err(bad(format!("tensor {} at offset {}, expected {expected}", e.name, e.offset)));
            }
            let numel: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + numel * T::BYTES;
            if end > payload.len() {
                return Err(bad(format!("tensor {} runs past the end of the file", e.name)));
            }
            let data = payload[start..end].chunks_exact(T::BYTES).map(T::read_le).collect();
            expected = end as u64;
            tensors.push((e.name, e.shape, data));
        }
        if expected as usize != payload.len() {
            return Err(bad(format!("{} trailing payload bytes", payload.len() - expected as usize)));
        }
        Ok(Self {
            arch: header.arch,
            tensors,
            optimizer: header.optimizer,
            schedule: header.schedule,
            rng: header.rng,
            metrics: header.metrics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads a checkpoint and rejects it unless it was written for `arch`.
    pub fn load_for(path: &Path, arch: &ArchConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.arch != arch {
            return Err(bad("embedded architecture differs from the requested one"));
        }
        Ok(ckpt)
    }

    fn find(&self, name: &str, shape: &[usize]) -> Result<&[T]> {
        let (_, s, data) = self
            .tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if s != shape {
            return Err(bad(format!("tensor {name} has shape {s:?}, expected {shape:?}")));
        }
        Ok(data)
    }

    /// Rebuilds the model with every parameter and running statistic restored.
    pub fn model(&self) -> Result<Model<T>> {
        let mut model = Model::build(&self.arch, &mut ChaCha8Rng::seed_from_u64(0))?;
        let store = model.store_mut();
        for i in 0..store.params().len() {
            let (name, shape) = {
                let p = &store.params()[i];
                (p.name.clone(), p.tensor.shape().to_vec())
            };
            let data = self.find(&name, &shape)?.to_vec();
            store.params_mut()[i].tensor.data_mut().copy_from_slice(&data);
        }
        for i in 0..store.stats().len() {
            let (name, c) = {
                let (n, s) = &store.stats()[i];
                (n.clone(), s.mean.len())
            };
            let mean = self.find(&format!("{name}.{RUNNING_MEAN}"), &[c])?.to_vec();
            let var = self.find(&format!("{name}.{RUNNING_VAR}"), &[c])?.to_vec();
            let s = &mut store.stats_mut()[i].1;
            s.mean = mean;
            s.var = var;
        }
        Ok(model)
    }

    /// Optimizer state aligned with `model`'s parameters, if one was saved.
    pub fn optimizer_for(&self, model: &Model<T>) -> Result<Option<AdamW<T>>> {
        let Some(state) = self.optimizer else {
            return Ok(None);
        };
        let moments = model
            .store()
            .params()
            .iter()
            .map(|p| {
                let shape = p.tensor.shape();
                let m = self.find(&format!("{}.{ADAM_M}", p.name), shape)?.to_vec();
                let v = self.find(&format!("{}.{ADAM_V}", p.name), shape)?.to_vec();
                Ok((m, v))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(AdamW {
            hp: state.params,
            step: state.step,
            moments,
        }))
    }
}
