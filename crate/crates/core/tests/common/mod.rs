//! Fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use std::sync::Arc;

use scoped_dnas::data::{split_train_val, synthetic_dataset, ImageBatch, SyntheticSpec};
use scoped_dnas::engine::{SearchConfig, SearchData, StopConfig};
use scoped_dnas::searchspace::{build_supernet, ArchDescription, ResNetShape, Scope, StemKind};

pub const TINY_CLASSES: usize = 3;

/// One stage of two bottlenecks (mid width 4) behind an 8-channel 3x3 stem.
pub fn tiny_base() -> ArchDescription {
    ResNetShape {
        num_classes: TINY_CLASSES,
        in_channels: 3,
        stem: StemKind::SmallInput,
        stem_channels: 8,
        stage_blocks: vec![2],
        stage_mids: vec![4],
    }
    .build()
    .unwrap()
}

pub fn tiny_supernet() -> ArchDescription {
    build_supernet(&tiny_base(), Scope::Small).unwrap()
}

pub fn tiny_dataset(seed: u64, size: usize) -> ImageBatch {
    synthetic_dataset(&SyntheticSpec {
        classes: TINY_CLASSES,
        size,
        image_hw: 8,
        noise: 0.1,
        seed,
    })
    .unwrap()
}

/// Search settings for the tiny task; the stop rule is pushed past the
/// budget so runs last exactly `epochs`.
pub fn tiny_config(seed: u64, epochs: usize) -> SearchConfig {
    SearchConfig {
        epochs,
        batch_size: 16,
        stop: StopConfig {
            patience: epochs + 1,
            threshold: 0.9,
        },
        seed,
        ..SearchConfig::default()
    }
}

/// 288 synthetic images split two-thirds train, one-third validation.
pub fn tiny_search_data(seed: u64, batch_size: usize) -> SearchData {
    let data = Arc::new(tiny_dataset(seed, 288));
    let (train, val) = split_train_val(data, 2.0 / 3.0, seed, batch_size).unwrap();
    SearchData {
        train,
        val,
        augment: None,
    }
}
