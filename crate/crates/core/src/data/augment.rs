//! Random-resized crop, horizontal flip and per-channel normalization.
//!
//! Resizing is bilinear with the half-pixel (align-corners = false) mapping:
//! output pixel `d` samples source coordinate `(d + 0.5) * in / out - 0.5`,
//! clamped below at 0, neighbours clamped to the last row/column.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ImageBatch;

const CROP_ATTEMPTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    /// Crop area as a fraction of the source image.
    pub scale: (f64, f64),
    /// Crop aspect ratio (width / height), sampled log-uniformly.
    pub ratio: (f64, f64),
    pub resize: usize,
    pub flip_prob: f64,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            scale: (0.08, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            resize: 224,
            flip_prob: 0.5,
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        if self.resize < 8 {
            return Err(Error::Config(format!("resize target {} < 8", self.resize)));
        }
        let (s0, s1) = self.scale;
        let (r0, r1) = self.ratio;
        if !(0.0 < s0 && s0 <= s1 && s1 <= 1.0) || !(0.0 < r0 && r0 <= r1) {
            return Err(Error::Config(format!("crop scale {:?} / ratio {:?}", self.scale, self.ratio)));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config(format!("normalization std {:?}", self.std)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentMode {
    Train,
    Eval,
}

/// Per-channel mean and (population) standard deviation over a whole set.
pub fn channel_stats(batch: &ImageBatch) -> ([f32; 3], [f32; 3]) {
    let (c, h, w) = batch.image_dims();
    let plane = h * w;
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    for i in 0..batch.len() {
        for (ch, values) in batch.image(i).chunks(plane).enumerate().take(c.min(3)) {
            for &v in values {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
    }
    let n = (batch.len() * plane) as f64;
    let mut mean = [0f32; 3];
    let mut std = [1f32; 3];
    for ch in 0..c.min(3) {
        let m = sum[ch] / n;
        mean[ch] = m as f32;
        std[ch] = ((sq[ch] / n - m * m).max(1e-12)).sqrt() as f32;
    }
    (mean, std)
}

/// Bilinear resize of a `channels x h x w` image.
pub fn resize_bilinear(img: &[f32], channels: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    if (h, w) == (out_h, out_w) {
        return img.to_vec();
    }
    let axis = |out: usize, input: usize| -> Vec<(usize, usize, f32)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    for plane in img.chunks(h * w).take(channels) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Mirrors each row of a `channels x h x w` image.
pub fn hflip(img: &mut [f32], w: usize) {
    for row in img.chunks_mut(w) {
        row.reverse();
    }
}

fn crop(img: &[f32], channels: usize, h: usize, w: usize, top: usize, left: usize, ch: usize, cw: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(channels * ch * cw);
    for plane in img.chunks(h * w).take(channels) {
        for y in top..top + ch {
            out.extend_from_slice(&plane[y * w + left..y * w + left + cw]);
        }
    }
    out
}

/// Crop window `(top, left, height, width)`: up to ten random draws, then a
/// centred crop with the ratio clamped into range.
fn crop_window<R: Rng>(spec: &AugmentSpec, h: usize, w: usize, rng: &mut R) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (lr0, lr1) = (spec.ratio.0.ln(), spec.ratio.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * rng.gen_range(spec.scale.0..=spec.scale.1);
        let ratio = if lr0 < lr1 { rng.gen_range(lr0..lr1).exp() } else { lr0.exp() };
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.gen_range(0..=h - ch);
            let left = rng.gen_range(0..=w - cw);
            return (top, left, ch, cw);
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < spec.ratio.0 {
        (((w as f64) / spec.ratio.0).round() as usize, w)
    } else if in_ratio > spec.ratio.1 {
        (h, ((h as f64) * spec.ratio.1).round() as usize)
    } else {
        (h, w)
    };
    let (ch, cw) = (ch.clamp(1, h), cw.clamp(1, w));
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

/// Train: random-resized crop, flip, normalize. Eval: resize, normalize (no
/// randomness consumed).
pub fn augment<R: Rng>(batch: &ImageBatch, spec: &AugmentSpec, rng: &mut R, mode: AugmentMode) -> Result<ImageBatch> {
    spec.validate()?;
    let (c, h, w) = batch.image_dims();
    if c > 3 {
        return Err(Error::shape("augment", format!("{c} channels, at most 3 supported")));
    }
    let t = spec.resize;
    let mut data = Vec::with_capacity(batch.len() * c * t * t);
    for i in 0..batch.len() {
        let img = batch.image(i);
        let mut out = match mode {
            AugmentMode::Eval => resize_bilinear(img, c, h, w, t, t),
            AugmentMode::Train => {
                let (top, left, ch, cw) = crop_window(spec, h, w, rng);
                let cropped = crop(img, c, h, w, top, left, ch, cw);
                let mut r = resize_bilinear(&cropped, c, ch, cw, t, t);
                if rng.gen_bool(spec.flip_prob) {
                    hflip(&mut r, t);
                }
                r
            }
        };
        for (ch, plane) in out.chunks_mut(t * t).enumerate() {
            let (m, s) = (spec.mean[ch], spec.std[ch]);
            plane.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        data.extend(out);
    }
    ImageBatch::new(Tensor::new(vec![batch.len(), c, t, t], data)?, batch.labels.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(n: usize, hw: usize) -> ImageBatch {
        let data = (0..n * 3 * hw * hw).map(|i| ((i * 31) % 256) as f32 / 255.0).collect();
        ImageBatch::new(Tensor::new(vec![n, 3, hw, hw], data).unwrap(), vec![0; n]).unwrap()
    }

    #[test]
    fn identity_path_when_crop_is_full_and_no_flip() {
        let b = batch(2, 8);
        let spec = AugmentSpec {
            scale: (1.0, 1.0),
            ratio: (1.0, 1.0),
            resize: 8,
            flip_prob: 0.0,
            mean: [0.5, 0.25, 0.0],
            std: [2.0, 1.0, 0.5],
        };
        let out = augment(&b, &spec, &mut ChaCha8Rng::seed_from_u64(0), AugmentMode::Train).unwrap();
        for (i, (&o, &x)) in out.images.data().iter().zip(b.images.data()).enumerate() {
            let ch = (i / 64) % 3;
            assert_eq!(o, (x - spec.mean[ch]) / spec.std[ch]);
        }
    }

    #[test]
    fn flip_is_involution() {
        let b = batch(1, 5);
        let mut img = b.image(0).to_vec();
        hflip(&mut img, 5);
        assert_ne!(img, b.image(0));
        hflip(&mut img, 5);
        assert_eq!(img, b.image(0));
    }

    #[test]
    fn eval_mode_consumes_no_randomness() {
        let b = batch(3, 8);
        let spec = AugmentSpec {
            resize: 16,
            ..AugmentSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let before = rng.clone();
        let a = augment(&b, &spec, &mut rng, AugmentMode::Eval).unwrap();
        assert_eq!(rng, before);
        assert_eq!(a.images.shape(), &[3, 3, 16, 16]);
        assert_eq!(a, augment(&b, &spec, &mut rng, AugmentMode::Eval).unwrap());
    }

    #[test]
    fn train_mode_has_target_shape_and_is_seeded() {
        let b = batch(4, 32);
        let spec = AugmentSpec {
            resize: 24,
            ..AugmentSpec::default()
        };
        let a1 = augment(&b, &spec, &mut ChaCha8Rng::seed_from_u64(5), AugmentMode::Train).unwrap();
        let a2 = augment(&b, &spec, &mut ChaCha8Rng::seed_from_u64(5), AugmentMode::Train).unwrap();
        assert_eq!(a1.images.shape(), &[4, 3, 24, 24]);
        assert_eq!(a1, a2);
    }

    #[test]
    fn upsampling_a_constant_stays_constant() {
        let r = resize_bilinear(&[0.25; 4], 1, 2, 2, 5, 5);
        assert!(r.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn half_pixel_mapping() {
        // 2 -> 4 upsample of [0, 1]: sources -0.25(clamped 0), 0.25, 0.75, 1.25(clamped to last)
        let r = resize_bilinear(&[0.0, 1.0], 1, 1, 2, 1, 4);
        assert_eq!(r, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn invalid_specs() {
        let spec = AugmentSpec {
            flip_prob: 1.5,
            ..AugmentSpec::default()
        };
        assert!(spec.validate().is_err());
        let spec = AugmentSpec {
            resize: 4,
            ..AugmentSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn fallback_crop_is_centred() {
        // impossible ratio forces every random attempt to fail on a 4x16 image
        let spec = AugmentSpec {
            scale: (1.0, 1.0),
            ratio: (1.0, 1.0),
            ..AugmentSpec::default()
        };
        let (top, left, ch, cw) = crop_window(&spec, 4, 16, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((top, ch, cw), (0, 4, 4));
        assert_eq!(left, 6);
    }
}
