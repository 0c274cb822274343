use crate::error::{Error, Result};
use crate::ops::conv::window_extent;
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Window average; padded cells count toward the divisor.
    Avg,
    GlobalAvg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl PoolGeometry {
    pub fn new(shape: [usize; 4], window: usize, stride: usize, padding: usize) -> Result<Self> {
        let [batch, channels, height, width] = shape;
        if window == 0 || stride == 0 {
            return Err(Error::Config("pool window and stride must be positive".into()));
        }
        if padding >= window {
            return Err(Error::Config(format!("pool padding {padding} must be smaller than window {window}")));
        }
        let (Some(out_height), Some(out_width)) = (
            window_extent(height, window, stride, padding),
            window_extent(width, window, stride, padding),
        ) else {
            return Err(Error::Config(format!(
                "pool window {window} larger than padded {height}x{width} input (padding {padding})"
            )));
        };
        Ok(PoolGeometry {
            batch,
            channels,
            height,
            width,
            window,
            stride,
            padding,
            out_height,
            out_width,
        })
    }

    fn cells(&self, oh: usize, ow: usize) -> impl Iterator<Item = Option<(usize, usize)>> + '_ {
        (0..self.window).flat_map(move |kh| {
            (0..self.window).map(move |kw| {
                let ih = (oh * self.stride + kh) as isize - self.padding as isize;
                let iw = (ow * self.stride + kw) as isize - self.padding as isize;
                (ih >= 0 && iw >= 0 && (ih as usize) < self.height && (iw as usize) < self.width)
                    .then_some((ih as usize, iw as usize))
            })
        })
    }
}

/// Max pooling. Also returns, per output, the flat input index that won;
/// ties go to the first cell in row-major window order.
pub fn max_pool_forward<T: Element>(geo: &PoolGeometry, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let planes = geo.batch * geo.channels;
    let out_hw = geo.out_height * geo.out_width;
    let mut y = Vec::with_capacity(planes * out_hw);
    let mut arg = Vec::with_capacity(planes * out_hw);
    for p in 0..planes {
        let base = p * geo.height * geo.width;
        for oh in 0..geo.out_height {
            for ow in 0..geo.out_width {
                let mut best: Option<(T, usize)> = None;
                for (ih, iw) in geo.cells(oh, ow).flatten() {
                    let idx = base + ih * geo.width + iw;
                    if best.map_or(true, |(v, _)| x[idx] > v) {
                        best = Some((x[idx], idx));
                    }
                }
                // padding < window, so every window overlaps the input
                let (v, idx) = best.unwrap_or((T::neg_infinity(), base));
                y.push(v);
                arg.push(idx);
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward<T: Element>(input_len: usize, argmax: &[usize], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(dy) {
        dx[idx] = dx[idx] + g;
    }
    dx
}

pub fn avg_pool_forward<T: Element>(geo: &PoolGeometry, x: &[T]) -> Vec<T> {
    let planes = geo.batch * geo.channels;
    let norm = T::of((geo.window * geo.window) as f64);
    let mut y = Vec::with_capacity(planes * geo.out_height * geo.out_width);
    for p in 0..planes {
        let base = p * geo.height * geo.width;
        for oh in 0..geo.out_height {
            for ow in 0..geo.out_width {
                let s: T = geo.cells(oh, ow).flatten().map(|(ih, iw)| x[base + ih * geo.width + iw]).sum();
                y.push(s / norm);
            }
        }
    }
    y
}

pub fn avg_pool_backward<T: Element>(geo: &PoolGeometry, dy: &[T]) -> Vec<T> {
    let planes = geo.batch * geo.channels;
    let norm = T::of((geo.window * geo.window) as f64);
    let mut dx = vec![T::zero(); planes * geo.height * geo.width];
    let mut o = 0;
    for p in 0..planes {
        let base = p * geo.height * geo.width;
        for oh in 0..geo.out_height {
            for ow in 0..geo.out_width {
                let g = dy[o] / norm;
                o += 1;
                for (ih, iw) in geo.cells(oh, ow).flatten() {
                    let i = base + ih * geo.width + iw;
                    dx[i] = dx[i] + g;
                }
            }
        }
    }
    dx
}

/// Mean over H and W: `N x C x H x W -> N x C`.
pub fn global_avg_forward<T: Element>(x: &[T], shape: [usize; 4]) -> Vec<T> {
    let hw = shape[2] * shape[3];
    let norm = T::of(hw as f64);
    x.chunks(hw).map(|plane| plane.iter().copied().sum::<T>() / norm).collect()
}

pub fn global_avg_backward<T: Element>(dy: &[T], shape: [usize; 4]) -> Vec<T> {
    let hw = shape[2] * shape[3];
    let norm = T::of(hw as f64);
    dy.iter().flat_map(|&g| std::iter::repeat(g / norm).take(hw)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_two_by_two() {
        let geo = PoolGeometry::new([1, 1, 2, 2], 2, 2, 0).unwrap();
        let (y, arg) = max_pool_forward(&geo, &[1.0f64, 2.0, 3.0, 4.0]);
        assert_eq!(y, vec![4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn max_ties_route_to_first() {
        let geo = PoolGeometry::new([1, 1, 2, 2], 2, 2, 0).unwrap();
        let (_, arg) = max_pool_forward(&geo, &[5.0f64, 5.0, 5.0, 5.0]);
        assert_eq!(max_pool_backward(4, &arg, &[1.0]), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn global_avg_of_constant() {
        assert_eq!(global_avg_forward(&[2.5f64; 12], [1, 3, 2, 2]), vec![2.5; 3]);
    }

    #[test]
    fn avg_gradient_is_uniform_share() {
        let geo = PoolGeometry::new([1, 1, 2, 2], 2, 2, 0).unwrap();
        assert_eq!(avg_pool_backward(&geo, &[1.0f64]), vec![0.25; 4]);
    }

    #[test]
    fn oversized_window_is_rejected() {
        assert!(matches!(PoolGeometry::new([1, 1, 2, 2], 5, 1, 1), Err(Error::Config(_))));
    }
}
