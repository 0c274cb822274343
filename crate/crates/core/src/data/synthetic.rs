//! Separable synthetic images: every class owns a smooth per-channel
//! sinusoidal template; samples add Gaussian pixel noise and are clamped to
//! `[0, 1]`. Labels are assigned round-robin.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ImageBatch;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub size: usize,
    pub image_hw: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

fn templates(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let hw = spec.image_hw;
    (0..spec.classes)
        .map(|_| {
            let mut t = Vec::with_capacity(3 * hw * hw);
            for _ in 0..3 {
                let fx = rng.gen_range(0..=2) as f64;
                let fy = rng.gen_range(0..=2) as f64;
                let phase = rng.gen_range(0.0..TAU);
                let amp = rng.gen_range(0.2..0.45);
                for y in 0..hw {
                    for x in 0..hw {
                        let arg = TAU * (fx * x as f64 + fy * y as f64) / hw as f64 + phase;
                        t.push((0.5 + amp * arg.sin()) as f32);
                    }
                }
            }
            t
        })
        .collect()
}

pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<ImageBatch> {
    if spec.classes < 2 {
        return Err(Error::Config(format!("synthetic data needs at least 2 classes, got {}", spec.classes)));
    }
    if spec.size == 0 || spec.image_hw == 0 || !(spec.noise >= 0.0) {
        return Err(Error::Config(format!("invalid synthetic spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let temps = templates(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise).expect("non-negative std");
    let per = 3 * spec.image_hw * spec.image_hw;
    let mut data = Vec::with_capacity(spec.size * per);
    let labels: Vec<usize> = (0..spec.size).map(|i| i % spec.classes).collect();
    for &label in &labels {
        for &v in &temps[label] {
            let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            data.push((v as f64 + n).clamp(0.0, 1.0) as f32);
        }
    }
    ImageBatch::new(Tensor::new(vec![spec.size, 3, spec.image_hw, spec.image_hw], data)?, labels)
}
