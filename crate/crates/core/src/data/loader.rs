use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cifar::{ImageRecord, IMAGE_BYTES, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const PLANE: usize = IMAGE_SIDE * IMAGE_SIDE;
const CROP_PAD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Per-channel affine map `(pixel / 255 - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    /// Published CIFAR-10 training-set statistics.
    fn default() -> Self {
        Self {
            mean: [0.4914, 0.4822, 0.4465],
            std: [0.2470, 0.2435, 0.2616],
        }
    }
}

impl Normalization {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid(format!("normalization std must be positive, got {std:?}")));
        }
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Per-channel mean and population standard deviation of `pixel / 255`.
    pub fn from_records(records: &[ImageRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sum = [0u64; 3];
        let mut sq = [0u64; 3];
        for r in records {
            for (c, plane) in r.pixels.chunks(PLANE).enumerate() {
                for &p in plane {
                    sum[c] += p as u64;
                    sq[c] += (p as u64) * (p as u64);
                }
            }
        }
        let n = (records.len() * PLANE) as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            let m = sum[c] as f64 / n;
            let var = (sq[c] as f64 / n - m * m).max(0.0);
            mean[c] = m / 255.0;
            std[c] = var.sqrt() / 255.0;
        }
        Self::new(mean, std)
    }

    pub fn apply(&self, channel: usize, pixel: u8) -> f64 {
        (pixel as f64 / 255.0 - self.mean[channel]) / self.std[channel]
    }

    fn table<T: Scalar>(&self) -> Vec<T> {
        (0..3)
            .flat_map(|c| (0..=255u8).map(move |p| (c, p)))
            .map(|(c, p)| T::lit(self.apply(c, p)))
            .collect()
    }

    /// A `[1,3,32,32]` tensor for one record.
    pub fn normalize<T: Scalar>(&self, record: &ImageRecord) -> Tensor<T> {
        let table = self.table::<T>();
        let data = write_pixels(&table, &record.pixels);
        Tensor::from_vec(vec![1, 3, IMAGE_SIDE, IMAGE_SIDE], data).expect("fixed image size")
    }
}

fn write_pixels<T: Scalar>(table: &[T], pixels: &[u8]) -> Vec<T> {
    pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| table[(i / PLANE) * 256 + p as usize])
        .collect()
}

/// An ordered set of labelled images with its normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub split: Split,
    pub num_classes: usize,
    pub norm: Normalization,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>, split: Split, num_classes: usize) -> Result<Self> {
        if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.label as usize >= num_classes) {
            return Err(Error::CorruptRecord {
                index: i,
                detail: format!("label {} is not below {num_classes}", r.label),
            });
        }
        Ok(Self {
            records,
            split,
            num_classes,
            norm: Normalization::default(),
        })
    }

    pub fn with_norm(mut self, norm: Normalization) -> Self {
        self.norm = norm;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The first `n` records (all of them if fewer).
    pub fn truncate(mut self, n: usize) -> Self {
        self.records.truncate(n);
        self
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label as usize).collect()
    }
}

/// One mini-batch: normalized images `[N,3,32,32]`, labels and record indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

pub struct Batches<'a, T> {
    ds: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    augment: bool,
    rng: ChaCha8Rng,
    table: Vec<T>,
}

/// Seed for epoch `epoch` of a run seeded with `seed`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One pass over `ds`. The final partial batch is kept.
///
/// `seed` drives the shuffle and the augmentation draws (random horizontal
/// flip, then a random crop of the 4-pixel reflect-padded image).
pub fn batches<T: Scalar>(
    ds: &Dataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    augment: bool,
) -> Result<Batches<'_, T>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if shuffle {
        order.shuffle(&mut rng);
    }
    Ok(Batches {
        ds,
        order,
        pos: 0,
        batch_size,
        augment,
        rng,
        table: ds.norm.table(),
    })
}

fn reflect(v: isize) -> usize {
    let last = IMAGE_SIDE as isize - 1;
    let r = if v < 0 {
        -v
    } else if v > last {
        2 * last - v
    } else {
        v
    };
    r as usize
}

fn augment_pixels<R: Rng>(pixels: &[u8], rng: &mut R) -> Vec<u8> {
    let flip = rng.random_bool(0.5);
    let dy = rng.random_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize;
    let dx = rng.random_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize;
    let mut out = vec![0u8; IMAGE_BYTES];
    for c in 0..3 {
        for y in 0..IMAGE_SIDE {
            let sy = reflect(y as isize + dy);
            for x in 0..IMAGE_SIDE {
                let mut sx = reflect(x as isize + dx);
                if flip {
                    sx = IMAGE_SIDE - 1 - sx;
                }
                out[c * PLANE + y * IMAGE_SIDE + x] = pixels[c * PLANE + sy * IMAGE_SIDE + sx];
            }
        }
    }
    out
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let mut data = Vec::with_capacity(indices.len() * IMAGE_BYTES);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in &indices {
            let r = &self.ds.records[i];
            labels.push(r.label as usize);
            if self.augment {
                let px = augment_pixels(&r.pixels, &mut self.rng);
                data.extend(write_pixels(&self.table, &px));
            } else {
                data.extend(write_pixels(&self.table, &r.pixels));
            }
        }
        let images = Tensor::from_vec(vec![indices.len(), 3, IMAGE_SIDE, IMAGE_SIDE], data).expect("fixed image size");
        Some(Batch {
            images,
            labels,
            indices,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> Dataset {
        let records = (0..n)
            .map(|i| ImageRecord::new((i % 10) as u8, vec![i as u8; IMAGE_BYTES]).unwrap())
            .collect();
        Dataset::new(records, Split::Train, 10).unwrap()
    }

    #[test]
    fn partial_final_batch() {
        let ds = dataset(10);
        let sizes: Vec<_> = batches::<f32>(&ds, 4, false, 0, false).unwrap().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn unshuffled_order() {
        let ds = dataset(7);
        let idx: Vec<_> = batches::<f32>(&ds, 3, false, 0, false).unwrap().flat_map(|b| b.indices).collect();
        assert_eq!(idx, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn empty_and_zero_batch() {
        let ds = dataset(0);
        assert!(matches!(batches::<f32>(&ds, 4, false, 0, false), Err(Error::EmptyDataset)));
        assert!(batches::<f32>(&dataset(3), 0, false, 0, false).is_err());
    }

    #[test]
    fn identity_normalization_is_exact() {
        let n = Normalization::identity();
        for p in 0..=255u8 {
            assert_eq!(n.apply(1, p), p as f64 / 255.0);
        }
    }

    #[test]
    fn zero_std_rejected() {
        assert!(Normalization::new([0.5; 3], [0.2, 0.0, 0.2]).is_err());
    }

    #[test]
    fn mean_pixel_maps_near_zero() {
        let n = Normalization::default();
        for c in 0..3 {
            let p = (n.mean[c] * 255.0).round() as u8;
            assert!(n.apply(c, p).abs() < 1.0 / (255.0 * n.std[c]));
        }
    }

    #[test]
    fn label_out_of_range() {
        let r = ImageRecord::new(12, vec![0; IMAGE_BYTES]).unwrap();
        assert!(Dataset::new(vec![r], Split::Test, 10).is_err());
    }
}
