//! Per-channel batch normalization over (N, H, W).

use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running statistics are blended in.
    Train,
    /// Batch statistics; running statistics left untouched.
    TrainFrozenStats,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Saved forward state needed by the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_stats: bool,
}

pub fn batchnorm_forward<T: Element>(
    x: &[T],
    shape: [usize; 4],
    gamma: &[T],
    beta: &[T],
    stats: &mut RunningStats<T>,
    mode: NormMode,
    momentum: T,
    eps: T,
) -> Result<(Vec<T>, NormCache<T>)> {
    let [n, c, h, w] = shape;
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("{c} channels but gamma/beta/stats sized {}/{}/{}", gamma.len(), beta.len(), stats.mean.len()),
        ));
    }
    let hw = h * w;
    let count = n * hw;
    let batch_stats = mode != NormMode::Eval;
    if batch_stats && count < 2 {
        return Err(Error::DegenerateVariance(count));
    }
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let plane = |b: usize| &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
        let (mean, var) = if batch_stats {
            let m = T::of((0..n).map(|b| plane(b).iter().map(|v| v.as_f64()).sum::<f64>()).sum::<f64>() / count as f64);
            let v = (0..n)
                .map(|b| plane(b).iter().map(|&v| (v - m) * (v - m)).sum::<T>())
                .sum::<T>()
                / T::of(count as f64);
            if mode == NormMode::Train {
                let unbiased = v * T::of(count as f64 / (count - 1) as f64);
                stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * m;
                stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * unbiased;
            }
            (m, v)
        } else {
            (stats.mean[ch], stats.var[ch])
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let xh = (x[i] - mean) * is;
                xhat[i] = xh;
                y[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok((y, NormCache { xhat, inv_std, batch_stats }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Element>(
    dy: &[T],
    shape: [usize; 4],
    gamma: &[T],
    cache: &NormCache<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let count = T::of((n * hw) as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                sum_dy = sum_dy + dy[i];
                sum_dy_xhat = sum_dy_xhat + dy[i] * cache.xhat[i];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch];
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dx[i] = if cache.batch_stats {
                    scale * (dy[i] - sum_dy / count - cache.xhat[i] * sum_dy_xhat / count)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
