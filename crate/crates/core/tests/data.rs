use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scoped_dnas::data::{
    augment, channel_stats, load_cifar10_batchfile, parse_cifar10, resolve_data_dir, split_train_val,
    synthetic_dataset, to_cifar10_bytes, AugmentMode, AugmentSpec, BatchStream, SyntheticSpec, CIFAR_RECORD_BYTES,
};
use scoped_dnas::Error;

fn record(label: u8, pixel: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..3072).map(pixel));
    r
}

#[test]
fn crafted_record_all_white_label_seven() {
    let b = parse_cifar10(&record(7, |_| 255)).unwrap();
    assert_eq!(b.len(), 1);
    assert_eq!(b.labels, vec![7]);
    assert!(b.images.data().iter().all(|&v| v == 1.0));
    assert_eq!(b.images.shape(), &[1, 3, 32, 32]);
}

#[test]
fn channel_planes_and_order_preserved() {
    // record 0: R plane 10, G plane 20, B plane 30; record 1 encodes position
    let mut bytes = record(3, |i| [10, 20, 30][i / 1024]);
    bytes.extend(record(9, |i| (i % 251) as u8));
    let b = parse_cifar10(&bytes).unwrap();
    assert_eq!(b.labels, vec![3, 9]);
    let first = b.image(0);
    assert_eq!(first[0], 10.0 / 255.0);
    assert_eq!(first[1024], 20.0 / 255.0);
    assert_eq!(first[3071], 30.0 / 255.0);
    // row-major: pixel (row 1, col 2) of the red plane is byte 32 + 2
    assert_eq!(b.image(1)[34], 34.0 / 255.0);
}

#[test]
fn round_trip_is_byte_identical() {
    let mut bytes = Vec::new();
    for k in 0..5u8 {
        bytes.extend(record(k * 2, |i| ((i * 7 + k as usize * 13) % 256) as u8));
    }
    let b = parse_cifar10(&bytes).unwrap();
    assert_eq!(to_cifar10_bytes(&b).unwrap(), bytes);
}

#[test]
fn malformed_files_rejected() {
    assert!(matches!(parse_cifar10(&[0u8; 3072]), Err(Error::Format { .. })));
    assert!(matches!(parse_cifar10(&record(10, |_| 0)), Err(Error::Format { .. })));
    assert!(matches!(parse_cifar10(&[]), Err(Error::Format { .. })));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truncated.bin");
    std::fs::write(&path, &record(1, |_| 0)[..3000]).unwrap();
    let err = load_cifar10_batchfile(&path).unwrap_err();
    assert!(err.to_string().contains("truncated.bin"), "{err}");
}

/// With real data present, the first record matches a direct byte read.
#[test]
fn real_batch_matches_byte_dump() {
    let Some(root) = resolve_data_dir(None) else {
        eprintln!("skipped: SCOPED_DNAS_DATA not set");
        return;
    };
    let path = [root.join("data_batch_1.bin"), root.join("cifar-10-batches-bin/data_batch_1.bin")]
        .into_iter()
        .find(|p| p.is_file());
    let Some(path): Option<PathBuf> = path else {
        eprintln!("skipped: no data_batch_1.bin under {}", root.display());
        return;
    };
    let raw = std::fs::read(&path).unwrap();
    assert_eq!(raw.len(), 10_000 * CIFAR_RECORD_BYTES);
    let b = load_cifar10_batchfile(&path).unwrap();
    assert_eq!(b.labels[0], raw[0] as usize);
    for i in 0..10 {
        assert_eq!(b.image(0)[i], raw[1 + i] as f32 / 255.0);
    }
    assert_eq!(to_cifar10_bytes(&b).unwrap(), raw);
}

#[test]
fn synthetic_classes_separable_by_nearest_template() {
    let spec = SyntheticSpec {
        classes: 10,
        size: 500,
        image_hw: 8,
        noise: 0.1,
        seed: 4,
    };
    let clean = synthetic_dataset(&SyntheticSpec { noise: 0.0, ..spec.clone() }).unwrap();
    let noisy = synthetic_dataset(&spec).unwrap();
    let templates: Vec<&[f32]> = (0..10).map(|c| clean.image(c)).collect();
    for i in 0..noisy.len() {
        let x = noisy.image(i);
        let dist = |t: &[f32]| x.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f32>();
        let nearest = (0..10).min_by(|&a, &b| dist(templates[a]).total_cmp(&dist(templates[b]))).unwrap();
        assert_eq!(nearest, noisy.labels[i], "image {i}");
    }
}

#[test]
fn normalization_with_dataset_stats_centers_channels() {
    let data = synthetic_dataset(&SyntheticSpec {
        classes: 4,
        size: 64,
        image_hw: 8,
        noise: 0.2,
        seed: 1,
    })
    .unwrap();
    let (mean, std) = channel_stats(&data);
    let spec = AugmentSpec {
        resize: 8,
        mean,
        std,
        ..AugmentSpec::default()
    };
    let out = augment(&data, &spec, &mut ChaCha8Rng::seed_from_u64(0), AugmentMode::Eval).unwrap();
    let (m, s) = channel_stats(&out);
    for c in 0..3 {
        assert!(m[c].abs() < 1e-4, "mean {m:?}");
        assert!((s[c] - 1.0).abs() < 1e-3, "std {s:?}");
    }
}

#[test]
fn train_augmentation_shapes_and_determinism() {
    let data = synthetic_dataset(&SyntheticSpec {
        classes: 2,
        size: 6,
        image_hw: 12,
        noise: 0.1,
        seed: 3,
    })
    .unwrap();
    let spec = AugmentSpec {
        resize: 20,
        ..AugmentSpec::default()
    };
    let run = |seed| augment(&data, &spec, &mut ChaCha8Rng::seed_from_u64(seed), AugmentMode::Train).unwrap();
    let a = run(1);
    assert_eq!(a.images.shape(), &[6, 3, 20, 20]);
    assert_eq!(a.labels, data.labels);
    assert_eq!(a, run(1));
    assert_ne!(a, run(2));
    // eval mode consumes no randomness
    let e1 = augment(&data, &spec, &mut ChaCha8Rng::seed_from_u64(1), AugmentMode::Eval).unwrap();
    let e2 = augment(&data, &spec, &mut ChaCha8Rng::seed_from_u64(2), AugmentMode::Eval).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn invalid_augment_specs_rejected() {
    let data = synthetic_dataset(&SyntheticSpec {
        classes: 2,
        size: 2,
        image_hw: 8,
        noise: 0.0,
        seed: 0,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for spec in [
        AugmentSpec { flip_prob: 1.5, ..AugmentSpec::default() },
        AugmentSpec { resize: 4, ..AugmentSpec::default() },
    ] {
        assert!(matches!(augment(&data, &spec, &mut rng, AugmentMode::Train), Err(Error::Config(_))));
    }
}

#[test]
fn streams_cycle_without_exhaustion() {
    let data = Arc::new(
        synthetic_dataset(&SyntheticSpec {
            classes: 3,
            size: 30,
            image_hw: 4,
            noise: 0.0,
            seed: 0,
        })
        .unwrap(),
    );
    let (mut train, val) = split_train_val(data.clone(), 0.8, 0, 7).unwrap();
    assert_eq!(train.indices().len() + val.indices().len(), 30);
    assert_eq!(train.batches_per_pass(), 24 / 7);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..100 {
        let idx = train.next_indices();
        assert_eq!(idx.len(), 7);
        seen.extend(idx);
    }
    assert!(seen.iter().all(|i| train.indices().contains(i)));
    let tiny = BatchStream::new(data, vec![1, 2], 5, 0).unwrap();
    assert_eq!(tiny.batches_per_pass(), 1);
}
