//! Image datasets: CIFAR binary files, a seeded synthetic set, normalization and batching.

mod cifar;
mod loader;
mod synthetic;

pub use cifar::{
    load_cifar_dir, parse_cifar10, parse_cifar100, serialize_cifar10, serialize_cifar100, CifarKind, ImageRecord,
    CIFAR100_RECORD, CIFAR10_RECORD, IMAGE_BYTES, IMAGE_SIDE,
};
pub use loader::{batches, epoch_seed, Batch, Batches, Dataset, Normalization, Split};
pub use synthetic::{synthetic_dataset, synthetic_pattern};
