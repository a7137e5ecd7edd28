use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_BYTES: usize = 3 * IMAGE_SIDE * IMAGE_SIDE;
pub const CIFAR10_RECORD: usize = 1 + IMAGE_BYTES;
pub const CIFAR100_RECORD: usize = 2 + IMAGE_BYTES;

/// One 32x32 RGB image, planes in R, G, B order, each row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    /// Fine label for CIFAR-100.
    pub label: u8,
    pub coarse_label: Option<u8>,
    pub pixels: Vec<u8>,
}

impl ImageRecord {
    pub fn new(label: u8, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != IMAGE_BYTES {
            return Err(Error::Invalid(format!("image needs {IMAGE_BYTES} bytes, got {}", pixels.len())));
        }
        Ok(Self {
            label,
            coarse_label: None,
            pixels,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

impl CifarKind {
    pub fn record_len(self) -> usize {
        match self {
            Self::Cifar10 => CIFAR10_RECORD,
            Self::Cifar100 => CIFAR100_RECORD,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Self::Cifar10 => 10,
            Self::Cifar100 => 100,
        }
    }
}

fn check_len(bytes: &[u8], record: usize) -> Result<()> {
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::Truncated {
            len: bytes.len(),
            record,
            offset: bytes.len() / record * record,
        });
    }
    Ok(())
}

fn corrupt(index: usize, detail: String) -> Error {
    Error::CorruptRecord { index, detail }
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<ImageRecord>> {
    check_len(bytes, CIFAR10_RECORD)?;
    bytes
        .chunks_exact(CIFAR10_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] >= 10 {
                return Err(corrupt(i, format!("label {} is not below 10", rec[0])));
            }
            Ok(ImageRecord {
                label: rec[0],
                coarse_label: None,
                pixels: rec[1..].to_vec(),
            })
        })
        .collect()
}

pub fn parse_cifar100(bytes: &[u8]) -> Result<Vec<ImageRecord>> {
    check_len(bytes, CIFAR100_RECORD)?;
    bytes
        .chunks_exact(CIFAR100_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let (coarse, fine) = (rec[0], rec[1]);
            if coarse >= 20 {
                return Err(corrupt(i, format!("coarse label {coarse} is not below 20")));
            }
            if fine >= 100 {
                return Err(corrupt(i, format!("fine label {fine} is not below 100")));
            }
            Ok(ImageRecord {
                label: fine,
                coarse_label: Some(coarse),
                pixels: rec[2..].to_vec(),
            })
        })
        .collect()
}

pub fn serialize_cifar10(records: &[ImageRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR10_RECORD);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

/// Records without a coarse label are written with coarse label 0.
pub fn serialize_cifar100(records: &[ImageRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR100_RECORD);
    for r in records {
        out.push(r.coarse_label.unwrap_or(0));
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

/// Reads the train or test split of an extracted CIFAR binary directory.
///
/// CIFAR-10 is recognised by `data_batch_1.bin`, CIFAR-100 by `train.bin`.
pub fn load_cifar_dir(dir: &Path, train: bool) -> Result<(CifarKind, Vec<ImageRecord>)> {
    if dir.join("data_batch_1.bin").is_file() {
        let files: Vec<String> = if train {
            (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
        } else {
            vec!["test_batch.bin".into()]
        };
        let mut records = Vec::new();
        for f in files {
            records.extend(parse_cifar10(&std::fs::read(dir.join(f))?)?);
        }
        Ok((CifarKind::Cifar10, records))
    } else if dir.join("train.bin").is_file() {
        let file = if train { "train.bin" } else { "test.bin" };
        Ok((CifarKind::Cifar100, parse_cifar100(&std::fs::read(dir.join(file))?)?))
    } else {
        Err(Error::Invalid(format!(
            "{} holds neither data_batch_1.bin nor train.bin",
            dir.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_records() {
        let r = parse_cifar10(&[0; CIFAR10_RECORD]).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].label, 0);
        assert!(r[0].pixels.iter().all(|&p| p == 0));
        let r = parse_cifar100(&[0; CIFAR100_RECORD]).unwrap();
        assert_eq!((r[0].coarse_label, r[0].label), (Some(0), 0));
        assert!(parse_cifar10(&[]).unwrap().is_empty());
    }

    #[test]
    fn truncated_offset() {
        let err = parse_cifar10(&[0; CIFAR10_RECORD + 1]).unwrap_err();
        assert!(matches!(err, Error::Truncated { offset: 3073, .. }), "{err}");
        let err = parse_cifar100(&[0; 2 * CIFAR100_RECORD - 5]).unwrap_err();
        assert!(matches!(err, Error::Truncated { offset: 3074, .. }), "{err}");
    }

    #[test]
    fn corrupt_labels() {
        let mut bytes = vec![0; 3 * CIFAR10_RECORD];
        bytes[2 * CIFAR10_RECORD] = 10;
        assert!(matches!(parse_cifar10(&bytes), Err(Error::CorruptRecord { index: 2, .. })));
        let mut bytes = vec![0; CIFAR100_RECORD];
        bytes[1] = 255;
        assert!(matches!(parse_cifar100(&bytes), Err(Error::CorruptRecord { index: 0, .. })));
        bytes[1] = 0;
        bytes[0] = 20;
        assert!(matches!(parse_cifar100(&bytes), Err(Error::CorruptRecord { index: 0, .. })));
    }
}
