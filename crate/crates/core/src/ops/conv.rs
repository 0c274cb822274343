//! 2-D cross-correlation kernels (NCHW input, OIKK weights).
//!
//! Two algorithms share one geometry: a direct loop nest and an im2col
//! lowering onto GEMM. Both accumulate in a fixed order, so repeated calls are
//! bit-identical; they agree with each other to rounding.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Element, MatRef};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgorithm {
    Direct,
    #[default]
    Im2col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

/// Output extent of a sliding window, or `None` when it would be non-positive
/// or fractional.
pub(crate) fn window_extent(input: usize, window: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || window == 0 || padded < window {
        return None;
    }
    Some((padded - window) / stride + 1)
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let [batch, in_channels, height, width] = *x_shape else {
            return Err(Error::shape("conv2d", format!("input must be NCHW, got {x_shape:?}")));
        };
        let [out_channels, w_in, kh, kw] = *w_shape else {
            return Err(Error::shape("conv2d", format!("weight must be OIKK, got {w_shape:?}")));
        };
        if w_in != in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input has {in_channels} channels but weight expects {w_in}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let ext = |d| window_extent(d, kh, stride, padding);
        let (Some(out_height), Some(out_width)) = (ext(height), ext(width)) else {
            return Err(Error::Config(format!(
                "conv2d output extent is not positive for {height}x{width} input, kernel {kh}, padding {padding}"
            )));
        };
        Ok(ConvGeometry {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel: kh,
            stride,
            padding,
            out_height,
            out_width,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_height, self.out_width]
    }

    fn in_plane(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_channels * self.out_height * self.out_width
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn spatial_out(&self) -> usize {
        self.out_height * self.out_width
    }

    /// 1x1, stride 1, unpadded: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Input coordinate for an output coordinate and kernel offset, if inside.
    #[inline]
    fn source(&self, out: usize, offset: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + offset) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    pub fn macs(&self) -> u64 {
        (self.batch * self.out_plane() * self.patch()) as u64
    }
}

fn im2col<T: Element>(geo: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let k = geo.kernel;
    let hw = geo.spatial_out();
    for c in 0..geo.in_channels {
        let plane = &x[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for kh in 0..k {
            for kw in 0..k {
                let row = &mut cols[((c * k + kh) * k + kw) * hw..][..hw];
                for oh in 0..geo.out_height {
                    let dst = &mut row[oh * geo.out_width..(oh + 1) * geo.out_width];
                    match geo.source(oh, kh, geo.height) {
                        None => dst.iter_mut().for_each(|v| *v = T::zero()),
                        Some(ih) => {
                            for (ow, v) in dst.iter_mut().enumerate() {
                                *v = match geo.source(ow, kw, geo.width) {
                                    Some(iw) => plane[ih * geo.width + iw],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Element>(geo: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let k = geo.kernel;
    let hw = geo.spatial_out();
    for c in 0..geo.in_channels {
        let plane = &mut dx[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for kh in 0..k {
            for kw in 0..k {
                let row = &cols[((c * k + kh) * k + kw) * hw..][..hw];
                for oh in 0..geo.out_height {
                    let Some(ih) = geo.source(oh, kh, geo.height) else {
                        continue;
                    };
                    for ow in 0..geo.out_width {
                        if let Some(iw) = geo.source(ow, kw, geo.width) {
                            let v = &mut plane[ih * geo.width + iw];
                            *v = *v + row[oh * geo.out_width + ow];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(
    geo: &ConvGeometry,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    algo: ConvAlgorithm,
) -> Vec<T> {
    let mut out = vec![T::zero(); geo.batch * geo.out_plane()];
    match algo {
        ConvAlgorithm::Direct => direct_forward(geo, x, weight, &mut out),
        ConvAlgorithm::Im2col => {
            let mut cols = if geo.is_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); geo.patch() * geo.spatial_out()]
            };
            for n in 0..geo.batch {
                let xn = &x[n * geo.in_plane()..(n + 1) * geo.in_plane()];
                let yn = &mut out[n * geo.out_plane()..(n + 1) * geo.out_plane()];
                let cols_ref: &[T] = if geo.is_pointwise() {
                    xn
                } else {
                    im2col(geo, xn, &mut cols);
                    &cols
                };
                gemm(
                    MatRef::new(weight, geo.out_channels, geo.patch()),
                    MatRef::new(cols_ref, geo.patch(), geo.spatial_out()),
                    T::zero(),
                    yn,
                );
            }
        }
    }
    if let Some(b) = bias {
        let hw = geo.spatial_out();
        for (i, chunk) in out.chunks_mut(hw).enumerate() {
            let bo = b[i % geo.out_channels];
            chunk.iter_mut().for_each(|v| *v = *v + bo);
        }
    }
    out
}

fn direct_forward<T: Element>(geo: &ConvGeometry, x: &[T], weight: &[T], out: &mut [T]) {
    let k = geo.kernel;
    for n in 0..geo.batch {
        for o in 0..geo.out_channels {
            for oh in 0..geo.out_height {
                for ow in 0..geo.out_width {
                    let mut acc = T::zero();
                    for c in 0..geo.in_channels {
                        for kh in 0..k {
                            let Some(ih) = geo.source(oh, kh, geo.height) else {
                                continue;
                            };
                            for kw in 0..k {
                                let Some(iw) = geo.source(ow, kw, geo.width) else {
                                    continue;
                                };
                                let xv = x[((n * geo.in_channels + c) * geo.height + ih) * geo.width + iw];
                                let wv = weight[((o * geo.in_channels + c) * k + kh) * k + kw];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    out[((n * geo.out_channels + o) * geo.out_height + oh) * geo.out_width + ow] = acc;
                }
            }
        }
    }
}

/// Gradients of a convolution. `dx`/`dweight` are computed only when requested;
/// `dbias` is always the spatial-batch sum of `dy`.
pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dweight: Option<Vec<T>>,
    pub dbias: Vec<T>,
}

pub fn conv2d_backward<T: Element>(
    geo: &ConvGeometry,
    x: &[T],
    weight: &[T],
    dy: &[T],
    want_dx: bool,
    want_dweight: bool,
    algo: ConvAlgorithm,
) -> ConvGrads<T> {
    let hw = geo.spatial_out();
    let mut dbias = vec![T::zero(); geo.out_channels];
    for (i, chunk) in dy.chunks(hw).enumerate() {
        let s: T = chunk.iter().copied().sum();
        dbias[i % geo.out_channels] = dbias[i % geo.out_channels] + s;
    }
    let mut dx = want_dx.then(|| vec![T::zero(); geo.batch * geo.in_plane()]);
    let mut dw = want_dweight.then(|| vec![T::zero(); weight.len()]);
    if !want_dx && !want_dweight {
        return ConvGrads { dx, dweight: dw, dbias };
    }
    match algo {
        ConvAlgorithm::Direct => direct_backward(geo, x, weight, dy, dx.as_deref_mut(), dw.as_deref_mut()),
        ConvAlgorithm::Im2col => {
            let pointwise = geo.is_pointwise();
            let mut cols = vec![T::zero(); if pointwise { 0 } else { geo.patch() * hw }];
            let mut dcols = vec![T::zero(); if pointwise { 0 } else { geo.patch() * hw }];
            for n in 0..geo.batch {
                let xn = &x[n * geo.in_plane()..(n + 1) * geo.in_plane()];
                let dyn_ = &dy[n * geo.out_plane()..(n + 1) * geo.out_plane()];
                let dy_mat = MatRef::new(dyn_, geo.out_channels, hw);
                if let Some(dw) = dw.as_deref_mut() {
                    let cols_ref: &[T] = if pointwise {
                        xn
                    } else {
                        im2col(geo, xn, &mut cols);
                        &cols
                    };
                    gemm(dy_mat, MatRef::t(cols_ref, geo.patch(), hw), T::one(), dw);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let dxn = &mut dx[n * geo.in_plane()..(n + 1) * geo.in_plane()];
                    let w_t = MatRef::t(weight, geo.out_channels, geo.patch());
                    if pointwise {
                        gemm(w_t, dy_mat, T::zero(), dxn);
                    } else {
                        gemm(w_t, dy_mat, T::zero(), &mut dcols);
                        col2im_add(geo, &dcols, dxn);
                    }
                }
            }
        }
    }
    ConvGrads { dx, dweight: dw, dbias }
}

fn direct_backward<T: Element>(
    geo: &ConvGeometry,
    x: &[T],
    weight: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let k = geo.kernel;
    for n in 0..geo.batch {
        for o in 0..geo.out_channels {
            for oh in 0..geo.out_height {
                for ow in 0..geo.out_width {
                    let g = dy[((n * geo.out_channels + o) * geo.out_height + oh) * geo.out_width + ow];
                    for c in 0..geo.in_channels {
                        for kh in 0..k {
                            let Some(ih) = geo.source(oh, kh, geo.height) else {
                                continue;
                            };
                            for kw in 0..k {
                                let Some(iw) = geo.source(ow, kw, geo.width) else {
                                    continue;
                                };
                                let xi = ((n * geo.in_channels + c) * geo.height + ih) * geo.width + iw;
                                let wi = ((o * geo.in_channels + c) * k + kh) * k + kw;
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[xi] = dx[xi] + g * weight[wi];
                                }
                                if let Some(dw) = dw.as_deref_mut() {
                                    dw[wi] = dw[wi] + g * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let geo = ConvGeometry::new(&[1, 1, 3, 3], &[1, 1, 3, 3], 1, 1).unwrap();
        for algo in [ConvAlgorithm::Direct, ConvAlgorithm::Im2col] {
            let y = conv2d_forward(&geo, &[1.0; 9], &[1.0; 9], None, algo);
            assert_eq!(y, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        }
    }

    #[test]
    fn scalar_conv_is_product() {
        let geo = ConvGeometry::new(&[1, 1, 1, 1], &[1, 1, 1, 1], 1, 0).unwrap();
        assert_eq!(conv2d_forward(&geo, &[3.0], &[-2.5], None, ConvAlgorithm::Im2col), vec![-7.5]);
    }

    #[test]
    fn geometry_errors() {
        assert!(matches!(
            ConvGeometry::new(&[1, 2, 4, 4], &[1, 3, 3, 3], 1, 1),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            ConvGeometry::new(&[1, 1, 2, 2], &[1, 1, 5, 5], 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn direct_and_im2col_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, stride, pad) in &[(1, 1, 0), (1, 2, 0), (3, 1, 1), (3, 2, 1), (5, 1, 2), (7, 2, 3)] {
            let geo = ConvGeometry::new(&[2, 3, 9, 9], &[4, 3, k, k], stride, pad).unwrap();
            let x = random(2 * 3 * 81, &mut rng);
            let w = random(4 * 3 * k * k, &mut rng);
            let dy = random(2 * 4 * geo.out_height * geo.out_width, &mut rng);
            let a = conv2d_forward(&geo, &x, &w, None, ConvAlgorithm::Direct);
            let b = conv2d_forward(&geo, &x, &w, None, ConvAlgorithm::Im2col);
            let ga = conv2d_backward(&geo, &x, &w, &dy, true, true, ConvAlgorithm::Direct);
            let gb = conv2d_backward(&geo, &x, &w, &dy, true, true, ConvAlgorithm::Im2col);
            let close = |u: &[f64], v: &[f64]| {
                u.iter().zip(v).all(|(p, q)| (p - q).abs() <= 1e-6 * p.abs().max(q.abs()).max(1.0))
            };
            assert!(close(&a, &b), "forward k={k} s={stride}");
            assert!(close(ga.dx.as_ref().unwrap(), gb.dx.as_ref().unwrap()), "dx k={k}");
            assert!(close(ga.dweight.as_ref().unwrap(), gb.dweight.as_ref().unwrap()), "dw k={k}");
        }
    }
}
