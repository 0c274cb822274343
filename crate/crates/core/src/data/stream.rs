use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::ImageBatch;

/// Endless minibatch stream over a fixed subset of a dataset.
///
/// Each pass visits the subset in an order shuffled from `(seed, pass)`;
/// batches have exactly `batch_size` images and the remainder of a pass is
/// dropped (a subset smaller than one batch yields itself).
#[derive(Clone, Debug)]
pub struct BatchStream {
    data: Arc<ImageBatch>,
    indices: Vec<usize>,
    batch_size: usize,
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchStream {
    pub fn new(data: Arc<ImageBatch>, indices: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("batch stream over an empty subset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(Error::Config(format!("index {i} outside dataset of {}", data.len())));
        }
        let mut s = BatchStream {
            data,
            indices,
            batch_size,
            seed,
            pass: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.pass);
        self.order = self.indices.clone();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Batches per pass over the subset.
    pub fn batches_per_pass(&self) -> usize {
        (self.indices.len() / self.batch_size).max(1)
    }

    /// Dataset indices of the next batch; starts a new pass when needed.
    pub fn next_indices(&mut self) -> Vec<usize> {
        let size = self.batch_size.min(self.order.len());
        if self.cursor + size > self.order.len() {
            self.pass += 1;
            self.reshuffle();
        }
        let out = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        out
    }

    pub fn next_batch(&mut self) -> ImageBatch {
        let idx = self.next_indices();
        self.data.select(&idx)
    }
}

/// Deterministic shuffled partition: `round(fraction * n)` indices train,
/// the rest validate.
pub fn split_train_val(
    data: Arc<ImageBatch>,
    fraction: f64,
    seed: u64,
    batch_size: usize,
) -> Result<(BatchStream, BatchStream)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} outside (0, 1)")));
    }
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (fraction * n as f64).round() as usize;
    if cut == 0 || cut == n {
        return Err(Error::Config(format!("splitting {n} items at {fraction} leaves one side empty")));
    }
    let val = idx.split_off(cut);
    let train = BatchStream::new(data.clone(), idx, batch_size, seed.wrapping_add(1))?;
    let val = BatchStream::new(data, val, batch_size, seed.wrapping_add(2))?;
    Ok((train, val))
}
