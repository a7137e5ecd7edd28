use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cifar::{ImageRecord, IMAGE_BYTES, IMAGE_SIDE};
use super::loader::{Dataset, Split};
use crate::error::{Error, Result};

const AMPLITUDE: f64 = 90.0;
const NOISE_STD: f64 = 24.0;

/// Noise-free grating for class `k` of `num_classes`.
///
/// Classes differ in orientation and spatial frequency; the three colour
/// planes carry phase-shifted copies so colour alone does not identify a class.
pub fn synthetic_pattern(k: usize, num_classes: usize) -> Vec<f64> {
    let theta = PI * k as f64 / num_classes as f64;
    let freq = 2.0 + (k % 3) as f64;
    let (s, c) = theta.sin_cos();
    let mut out = Vec::with_capacity(IMAGE_BYTES);
    for ch in 0..3 {
        let phase = ch as f64 * 2.0 * PI / 3.0;
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let u = (x as f64 * c + y as f64 * s) / IMAGE_SIDE as f64;
                out.push(127.5 + AMPLITUDE * (2.0 * PI * freq * u + phase).sin());
            }
        }
    }
    out
}

/// `n` images with labels `i % num_classes`: the class grating plus seeded Gaussian noise.
pub fn synthetic_dataset(n: usize, num_classes: usize, seed: u64) -> Result<Dataset> {
    if !(2..=256).contains(&num_classes) || n < num_classes {
        return Err(Error::Invalid(format!(
            "synthetic dataset needs 2..=256 classes and at least one sample per class, got n={n}, classes={num_classes}"
        )));
    }
    let patterns: Vec<_> = (0..num_classes).map(|k| synthetic_pattern(k, num_classes)).collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let k = i % num_classes;
            let pixels = patterns[k]
                .iter()
                .map(|&v| (v + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                .collect();
            ImageRecord::new(k as u8, pixels)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records, Split::Train, num_classes)
}
