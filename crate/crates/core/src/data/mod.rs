//! Image data: CIFAR-10 binary batches, augmentation, train/validation
//! streams and synthetic desk-scale datasets.

mod augment;
mod cifar;
mod stream;
mod synthetic;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, channel_stats, hflip, resize_bilinear, AugmentMode, AugmentSpec};
pub use cifar::{
    load_cifar10_batchfile, load_cifar10_split, parse_cifar10, resolve_data_dir, to_cifar10_bytes, CifarSplit,
    CIFAR_CLASSES, CIFAR_HW, CIFAR_RECORD_BYTES, DATA_DIR_ENV,
};
pub use stream::{split_train_val, BatchStream};
pub use synthetic::{synthetic_dataset, SyntheticSpec};

/// Images in `[0, 1]` (before normalization) with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl ImageBatch {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        let (n, _, _, _) = images.dims4()?;
        if n != labels.len() {
            return Err(Error::shape("image batch", format!("{n} images, {} labels", labels.len())));
        }
        Ok(ImageBatch { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(channels, height, width)` of each image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let (c, h, w) = self.image_dims();
        let n = c * h * w;
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let (c, h, w) = self.image_dims();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        ImageBatch {
            images: Tensor::new(vec![indices.len(), c, h, w], data).expect("consistent dims"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First `n` records (or all of them).
    pub fn truncate(&self, n: usize) -> ImageBatch {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}
