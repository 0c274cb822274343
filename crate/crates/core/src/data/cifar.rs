//! CIFAR-10 binary format: records of one label byte followed by 3072 pixel
//! bytes (1024 red, 1024 green, 1024 blue; each plane row-major 32x32).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ImageBatch;

pub const CIFAR_HW: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
const PIXELS: usize = 3 * CIFAR_HW * CIFAR_HW;
pub const CIFAR_RECORD_BYTES: usize = PIXELS + 1;

/// Environment variable naming the dataset root.
pub const DATA_DIR_ENV: &str = "SCOPED_DNAS_DATA";

pub fn parse_cifar10(bytes: &[u8]) -> Result<ImageBatch> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::format(
            "CIFAR-10 batch",
            format!("{} bytes is not a positive multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PIXELS);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::format("CIFAR-10 batch", format!("record {i} has label byte {label}")));
        }
        labels.push(label);
        data.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    ImageBatch::new(Tensor::new(vec![n, 3, CIFAR_HW, CIFAR_HW], data)?, labels)
}

pub fn load_cifar10_batchfile(path: impl AsRef<Path>) -> Result<ImageBatch> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes).map_err(|e| match e {
        Error::Format { what, detail } => Error::Format {
            what,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

/// Inverse of [`parse_cifar10`] for 3x32x32 images whose values are exact
/// multiples of 1/255.
pub fn to_cifar10_bytes(batch: &ImageBatch) -> Result<Vec<u8>> {
    if batch.image_dims() != (3, CIFAR_HW, CIFAR_HW) {
        return Err(Error::shape("CIFAR-10 serialize", format!("image dims {:?}", batch.image_dims())));
    }
    let mut out = Vec::with_capacity(batch.len() * CIFAR_RECORD_BYTES);
    for (i, &label) in batch.labels.iter().enumerate() {
        if label >= CIFAR_CLASSES {
            return Err(Error::LabelOutOfRange {
                label,
                classes: CIFAR_CLASSES,
            });
        }
        out.push(label as u8);
        for &v in batch.image(i) {
            let b = (v * 255.0).round();
            if !(0.0..=255.0).contains(&b) {
                return Err(Error::format("CIFAR-10 serialize", format!("pixel value {v} outside [0, 1]")));
            }
            out.push(b as u8);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarSplit {
    /// `data_batch_1.bin` .. `data_batch_5.bin`.
    Train,
    /// `test_batch.bin`.
    Test,
}

/// Explicit directory if given, else `$SCOPED_DNAS_DATA`.
pub fn resolve_data_dir(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

/// Loads a split from `root` or `root/cifar-10-batches-bin`.
pub fn load_cifar10_split(root: &Path, split: CifarSplit) -> Result<ImageBatch> {
    let names: Vec<String> = match split {
        CifarSplit::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        CifarSplit::Test => vec!["test_batch.bin".into()],
    };
    let dir = [root.to_path_buf(), root.join("cifar-10-batches-bin")]
        .into_iter()
        .find(|d| d.join(&names[0]).is_file())
        .ok_or_else(|| {
            Error::io(
                root.join(&names[0]),
                std::io::Error::new(std::io::ErrorKind::NotFound, "CIFAR-10 batch file not found"),
            )
        })?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for name in &names {
        let batch = load_cifar10_batchfile(dir.join(name))?;
        labels.extend(batch.labels);
        data.extend(batch.images.into_data());
    }
    let n = labels.len();
    ImageBatch::new(Tensor::new(vec![n, 3, CIFAR_HW, CIFAR_HW], data)?, labels)
}
