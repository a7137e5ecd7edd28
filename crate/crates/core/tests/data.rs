use std::collections::BTreeSet;

use fastboost::data::{
    batches, parse_cifar10, parse_cifar100, serialize_cifar10, serialize_cifar100, synthetic_dataset,
    synthetic_pattern, Dataset, ImageRecord, Normalization, Split, IMAGE_BYTES,
};
use proptest::prelude::*;

fn known_records() -> Vec<ImageRecord> {
    (0..5u8)
        .map(|i| {
            let pixels = (0..IMAGE_BYTES).map(|j| (j * 7 + i as usize * 31) as u8).collect();
            let mut r = ImageRecord::new(i * 2, pixels).unwrap();
            r.coarse_label = Some(i + 3);
            r
        })
        .collect()
}

#[test]
fn cifar10_round_trip() {
    let mut records = known_records();
    records.iter_mut().for_each(|r| r.coarse_label = None);
    let bytes = serialize_cifar10(&records);
    assert_eq!(bytes.len(), 5 * 3073);
    assert_eq!(parse_cifar10(&bytes).unwrap(), records);
}

#[test]
fn cifar100_round_trip() {
    let records = known_records();
    let bytes = serialize_cifar100(&records);
    assert_eq!(bytes[..2], [3, 0]);
    assert_eq!(parse_cifar100(&bytes).unwrap(), records);
}

fn cifar10_bytes() -> impl Strategy<Value = Vec<u8>> {
    (0usize..4).prop_flat_map(|n| {
        prop::collection::vec((0u8..10, prop::collection::vec(any::<u8>(), IMAGE_BYTES)), n).prop_map(|recs| {
            recs.into_iter()
                .flat_map(|(l, px)| std::iter::once(l).chain(px))
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn serialize_inverts_parse(bytes in cifar10_bytes()) {
        prop_assert_eq!(serialize_cifar10(&parse_cifar10(&bytes).unwrap()), bytes);
    }

    #[test]
    fn augmentation_preserves_labels(seed in any::<u64>()) {
        let ds = synthetic_dataset(12, 4, 1).unwrap().with_norm(Normalization::identity());
        for b in batches::<f64>(&ds, 5, true, seed, true).unwrap() {
            prop_assert_eq!(b.images.shape()[1..].to_vec(), vec![3, 32, 32]);
            for (i, &idx) in b.indices.iter().enumerate() {
                prop_assert_eq!(b.labels[i], ds.records[idx].label as usize);
            }
            prop_assert!(b.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn synthetic_is_deterministic_and_balanced() {
    let a = synthetic_dataset(256, 10, 7).unwrap();
    let b = synthetic_dataset(256, 10, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, synthetic_dataset(256, 10, 8).unwrap());
    let mut counts = [0usize; 10];
    a.records.iter().for_each(|r| counts[r.label as usize] += 1);
    assert!(counts.iter().all(|&c| c == 25 || c == 26), "{counts:?}");
    assert!(synthetic_dataset(5, 10, 0).is_err());
}

#[test]
fn synthetic_is_separable_by_nearest_centroid() {
    let k = 10;
    let ds = synthetic_dataset(256, k, 7).unwrap();
    let centroids: Vec<_> = (0..k).map(|c| synthetic_pattern(c, k)).collect();
    for r in &ds.records {
        let dist = |c: &Vec<f64>| -> f64 { c.iter().zip(&r.pixels).map(|(a, &b)| (a - b as f64).powi(2)).sum() };
        let best = (0..k).min_by(|&i, &j| dist(&centroids[i]).total_cmp(&dist(&centroids[j]))).unwrap();
        assert_eq!(best, r.label as usize);
    }
}

#[test]
fn stats_match_direct_computation() {
    let ds = synthetic_dataset(40, 4, 3).unwrap();
    let norm = Normalization::from_records(&ds.records).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = ds
            .records
            .iter()
            .flat_map(|r| r.pixels[c * 1024..(c + 1) * 1024].iter().map(|&p| p as f64 / 255.0))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((norm.mean[c] - m).abs() < 1e-12);
        assert!((norm.std[c] - v.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn shuffled_epoch_covers_every_index() {
    let ds = synthetic_dataset(53, 5, 2).unwrap();
    let idx: Vec<_> = batches::<f32>(&ds, 8, true, 99, false).unwrap().flat_map(|b| b.indices).collect();
    assert_eq!(idx.len(), 53);
    assert_eq!(idx.iter().copied().collect::<BTreeSet<_>>(), (0..53).collect());
    assert_ne!(idx, (0..53).collect::<Vec<_>>());
}

#[test]
fn seeded_augmentation_repeats() {
    let ds = synthetic_dataset(16, 4, 2).unwrap();
    let run = |seed| batches::<f32>(&ds, 16, true, seed, true).unwrap().next().unwrap();
    assert_eq!(run(5), run(5));
    assert_ne!(run(5).images, run(6).images);
    let plain = batches::<f32>(&ds, 16, false, 0, false).unwrap().next().unwrap();
    let first = ds.norm.normalize::<f32>(&ds.records[0]);
    assert_eq!(&plain.images.data()[..IMAGE_BYTES], first.data());
}

#[test]
fn dataset_rejects_bad_labels() {
    let r = ImageRecord::new(4, vec![0; IMAGE_BYTES]).unwrap();
    assert!(Dataset::new(vec![r.clone()], Split::Train, 4).is_err());
    assert!(Dataset::new(vec![r], Split::Train, 5).is_ok());
}
