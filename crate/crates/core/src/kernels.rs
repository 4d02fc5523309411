//! Numerical kernels on plain tensors: products, normalizations,
//! convolution and resampling, plus the adjoints used by the tape.
//!
//! Inner products accumulate in `f64` regardless of the element type.

use crate::error::{Error, Result};
use crate::parallel::for_each_row;
use crate::tensor::{Real, Tensor};

/// Default epsilon for [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Matrix product of `a[m×p]` and `b[p×q]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, p) = (a.shape()[0], a.shape()[1]);
    let (p2, q) = (b.shape()[0], b.shape()[1]);
    if p != p2 {
        return Err(Error::shape(format!(
            "matmul: inner dimensions differ ({:?} x {:?})",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); m * q];
    matmul_into(a.data(), b.data(), &mut out, m, p, q);
    Ok(Tensor::from_parts(vec![m, q], out))
}

/// `out[m×q] = a[m×p] · b[p×q]` on raw row-major slices.
pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, p: usize, q: usize) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), p * q);
    debug_assert_eq!(out.len(), m * q);
    for_each_row(out, q, m * p * q, |i, row| {
        matmul_row(&a[i * p..(i + 1) * p], b, row, q);
    });
}

#[inline]
fn matmul_row<T: Real>(a_row: &[T], b: &[T], out_row: &mut [T], q: usize) {
    let mut acc = vec![0.0f64; q];
    for (k, &av) in a_row.iter().enumerate() {
        let av = av.as_f64();
        if av == 0.0 {
            continue;
        }
        let b_row = &b[k * q..(k + 1) * q];
        for (s, &bv) in acc.iter_mut().zip(b_row) {
            *s += av * bv.as_f64();
        }
    }
    for (o, s) in out_row.iter_mut().zip(acc) {
        *o = T::cast_from(s);
    }
}

/// `aᵀ · b` for `a[p×m]`, `b[p×q]`.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul(&a.transpose()?, b)
}

/// `a · bᵀ` for `a[m×p]`, `b[q×p]`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul(a, &b.transpose()?)
}

/// Row-wise softmax over the last axis, stabilized by the row maximum.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = x.rows_cols();
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for_each_row(&mut out, cols, rows * cols * 8, |i, row| {
        softmax_slice(&src[i * cols..(i + 1) * cols], row);
    });
    Tensor::from_parts(x.shape().to_vec(), out)
}

pub(crate) fn softmax_slice<T: Real>(x: &[T], out: &mut [T]) {
    let max = x
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v.as_f64() - max).exp();
        sum += e;
        *o = T::cast_from(e);
    }
    for o in out.iter_mut() {
        *o = T::cast_from(o.as_f64() / sum);
    }
}

/// Adjoint of [`softmax_rows`] given its output `y` and upstream `dy`.
pub fn softmax_rows_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let (_, cols) = y.rows_cols();
    let mut dx = vec![T::zero(); y.len()];
    for ((dx_row, y_row), dy_row) in dx
        .chunks_mut(cols)
        .zip(y.data().chunks(cols))
        .zip(dy.data().chunks(cols))
    {
        let dot: f64 = y_row
            .iter()
            .zip(dy_row)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum();
        for ((o, &yv), &g) in dx_row.iter_mut().zip(y_row).zip(dy_row) {
            *o = T::cast_from(yv.as_f64() * (g.as_f64() - dot));
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

/// Normalizes every position across the last (channel) axis to zero mean
/// and unit variance. No learnable affine.
pub fn layer_norm<T: Real>(x: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if eps <= 0.0 {
        return Err(Error::arg("layer_norm: eps must be positive"));
    }
    let (_, cols) = x.rows_cols();
    let mut out = vec![T::zero(); x.len()];
    for (o, xr) in out.chunks_mut(cols).zip(x.data().chunks(cols)) {
        let (mean, inv_std) = moments(xr, eps);
        for (ov, &v) in o.iter_mut().zip(xr) {
            *ov = T::cast_from((v.as_f64() - mean) * inv_std);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

fn moments<T: Real>(row: &[T], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = row
        .iter()
        .map(|v| {
            let d = v.as_f64() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Adjoint of [`layer_norm`] with respect to its input.
pub fn layer_norm_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, eps: f64) -> Tensor<T> {
    let (_, cols) = x.rows_cols();
    let n = cols as f64;
    let mut dx = vec![T::zero(); x.len()];
    for ((dxr, xr), dyr) in dx
        .chunks_mut(cols)
        .zip(x.data().chunks(cols))
        .zip(dy.data().chunks(cols))
    {
        let (mean, inv_std) = moments(xr, eps);
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for (&v, &g) in xr.iter().zip(dyr) {
            let xhat = (v.as_f64() - mean) * inv_std;
            sum_dy += g.as_f64();
            sum_dy_xhat += g.as_f64() * xhat;
        }
        for ((o, &v), &g) in dxr.iter_mut().zip(xr).zip(dyr) {
            let xhat = (v.as_f64() - mean) * inv_std;
            *o = T::cast_from(inv_std * (g.as_f64() - sum_dy / n - xhat * sum_dy_xhat / n));
        }
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

/// Geometry of a 2-D convolution over an `h×w×cin` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], k_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x_shape.len() != 3 {
            return Err(Error::shape(format!(
                "conv2d: input must be h×w×c, got {x_shape:?}"
            )));
        }
        if k_shape.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d: kernel must be kh×kw×cin×cout, got {k_shape:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::arg("conv2d: stride must be at least 1"));
        }
        let (h, w, cin) = (x_shape[0], x_shape[1], x_shape[2]);
        let (kh, kw, kcin, cout) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if kcin != cin {
            return Err(Error::shape(format!(
                "conv2d: kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::shape(format!(
                "conv2d: kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(Self {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source pixel for output `(oy, ox)` and tap `(ky, kx)`, if inside the map.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); g.oh * g.ow * plen];
    for_each_row(&mut cols, plen, g.oh * g.ow * plen, |r, row| {
        let (oy, ox) = (r / g.ow, r % g.ow);
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                if let Some((y, xx)) = g.source(oy, ox, ky, kx) {
                    let dst = (ky * g.kw + kx) * g.cin;
                    let src = (y * g.w + xx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    });
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let plen = g.patch_len();
    let mut x = vec![T::zero(); g.h * g.w * g.cin];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &cols[(oy * g.ow + ox) * plen..(oy * g.ow + ox + 1) * plen];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    if let Some((y, xx)) = g.source(oy, ox, ky, kx) {
                        let src = (ky * g.kw + kx) * g.cin;
                        let dst = (y * g.w + xx) * g.cin;
                        for c in 0..g.cin {
                            x[dst + c] = x[dst + c] + row[src + c];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation of `x[h×w×cin]` with `kernel[kh×kw×cin×cout]` and
/// zero padding.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), kernel.shape(), stride, pad)?;
    let plen = g.patch_len();
    let rows = g.oh * g.ow;
    let mut out = vec![T::zero(); rows * g.cout];
    if g.is_pointwise() {
        matmul_into(x.data(), kernel.data(), &mut out, rows, plen, g.cout);
    } else {
        let cols = im2col(x.data(), &g);
        matmul_into(&cols, kernel.data(), &mut out, rows, plen, g.cout);
    }
    Ok(Tensor::from_parts(vec![g.oh, g.ow, g.cout], out))
}

/// Gradients of [`conv2d`]: `(d_input, d_kernel)`; either may be skipped.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_dx: bool,
    want_dk: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let g = ConvGeometry::new(x.shape(), kernel.shape(), stride, pad)?;
    let plen = g.patch_len();
    let rows = g.oh * g.ow;
    let dy2 = Tensor::from_parts(vec![rows, g.cout], dy.data().to_vec());
    let cols = if g.is_pointwise() {
        Tensor::from_parts(vec![rows, plen], x.data().to_vec())
    } else {
        Tensor::from_parts(vec![rows, plen], im2col(x.data(), &g))
    };
    let dk = if want_dk {
        let dk = matmul_tn(&cols, &dy2)?;
        Some(dk.reshape(kernel.shape().to_vec())?)
    } else {
        None
    };
    let dx = if want_dx {
        let k2 = Tensor::from_parts(vec![plen, g.cout], kernel.data().to_vec());
        let dcols = matmul_nt(&dy2, &k2)?;
        let data = if g.is_pointwise() {
            dcols.into_data()
        } else {
            col2im(dcols.data(), &g)
        };
        Some(Tensor::from_parts(x.shape().to_vec(), data))
    } else {
        None
    };
    Ok((dx, dk))
}

/// Source taps for one output coordinate of align-corners-false bilinear
/// resampling.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(n_in: usize, factor: usize) -> Vec<Tap> {
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear upsampling of `x[h×w×c]` by an integer factor
/// (align-corners = false).
pub fn bilinear_upsample<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    x.expect_rank(3, "bilinear_upsample")?;
    if factor == 0 {
        return Err(Error::arg("bilinear_upsample: factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let src = x.data();
    let mut out = vec![T::zero(); oh * ow * c];
    for_each_row(&mut out, ow * c, oh * ow * c * 4, |oy, row| {
        let a = ty[oy];
        for (ox, b) in tx.iter().enumerate() {
            let w00 = (1.0 - a.frac) * (1.0 - b.frac);
            let w01 = (1.0 - a.frac) * b.frac;
            let w10 = a.frac * (1.0 - b.frac);
            let w11 = a.frac * b.frac;
            let p00 = (a.lo * w + b.lo) * c;
            let p01 = (a.lo * w + b.hi) * c;
            let p10 = (a.hi * w + b.lo) * c;
            let p11 = (a.hi * w + b.hi) * c;
            for ch in 0..c {
                let v = w00 * src[p00 + ch].as_f64()
                    + w01 * src[p01 + ch].as_f64()
                    + w10 * src[p10 + ch].as_f64()
                    + w11 * src[p11 + ch].as_f64();
                row[ox * c + ch] = T::cast_from(v);
            }
        }
    });
    Ok(Tensor::from_parts(vec![oh, ow, c], out))
}

/// Adjoint of [`bilinear_upsample`]: scatters `dy` back onto the source grid.
pub fn bilinear_upsample_backward<T: Real>(
    in_shape: &[usize],
    dy: &Tensor<T>,
    factor: usize,
) -> Tensor<T> {
    if factor == 1 {
        return dy.clone();
    }
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let ow = w * factor;
    let mut dx = vec![0.0f64; h * w * c];
    let g = dy.data();
    for (oy, a) in ty.iter().enumerate() {
        for (ox, b) in tx.iter().enumerate() {
            let base = (oy * ow + ox) * c;
            let weights = [
                ((a.lo * w + b.lo) * c, (1.0 - a.frac) * (1.0 - b.frac)),
                ((a.lo * w + b.hi) * c, (1.0 - a.frac) * b.frac),
                ((a.hi * w + b.lo) * c, a.frac * (1.0 - b.frac)),
                ((a.hi * w + b.hi) * c, a.frac * b.frac),
            ];
            for (p, wt) in weights {
                if wt == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    dx[p + ch] += wt * g[base + ch].as_f64();
                }
            }
        }
    }
    Tensor::from_parts(
        in_shape.to_vec(),
        dx.into_iter().map(T::cast_from).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64s(shape.to_vec(), v).unwrap()
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, p, q) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros([m, q]).unwrap();
        for i in 0..m {
            for j in 0..q {
                let mut s = 0.0;
                for k in 0..p {
                    s += a.at(&[i, k]) * b.at(&[k, j]);
                }
                out.set(&[i, j], s);
            }
        }
        out
    }

    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros([oh, ow, cout]).unwrap();
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut s = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..cin {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    s += x.at(&[y as usize, xx as usize, ci])
                                        * k.at(&[ky, kx, ci, co]);
                                }
                            }
                        }
                    }
                    out.set(&[oy, ox, co], s);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let i = t(&[2, 2], &[1., 0., 0., 1.]);
        let b = t(&[2, 2], &[3., 4., 5., 6.]);
        assert_eq!(matmul(&i, &b).unwrap(), b);
        let r = matmul(&t(&[1, 2], &[1., 2.]), &t(&[2, 1], &[3., 4.])).unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f32>::zeros([2, 3]).unwrap();
        let b = Tensor::<f32>::zeros([2, 3]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = rng.normal_tensor::<f32>(&[5, 7]).unwrap();
        let b = rng.normal_tensor::<f32>(&[7, 3]).unwrap();
        let fast = matmul(&a, &b).unwrap();
        let slow = naive_matmul(&a.cast(), &b.cast());
        assert!(fast.cast::<f64>().max_abs_diff(&slow).unwrap() < 1e-6);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t(&[1, 3], &[0., 0., 0.]));
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = softmax_rows(&Tensor::<f32>::new([1, 2], vec![1000.0, 0.0]).unwrap());
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-6 && s.data()[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one_at_large_magnitude() {
        let mut rng = Rng::new(3);
        let x = rng.normal_tensor::<f32>(&[4, 6]).unwrap().map(|v| v * 1e4);
        let s = softmax_rows(&x);
        for r in 0..4 {
            let sum: f64 = s.row(r).iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let c = layer_norm(&t(&[2, 2, 3], &[5.0; 12]), LAYER_NORM_EPS).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        let n = layer_norm(&t(&[1, 1, 2], &[1., -1.]), LAYER_NORM_EPS).unwrap();
        assert!((n.data()[0] - 1.0).abs() < 1e-4 && (n.data()[1] + 1.0).abs() < 1e-4);
        let mut rng = Rng::new(5);
        let x = rng.normal_tensor::<f32>(&[3, 4, 8]).unwrap();
        let y = layer_norm(&x, LAYER_NORM_EPS).unwrap();
        for r in 0..12 {
            let mean: f64 = y.row(r).iter().map(|&v| v as f64).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-5);
        }
        assert!(layer_norm(&x, 0.0).is_err());
    }

    #[test]
    fn pointwise_conv_is_channel_matmul() {
        let mut rng = Rng::new(8);
        let x = rng.normal_tensor::<f64>(&[3, 4, 5]).unwrap();
        let k = rng.normal_tensor::<f64>(&[1, 1, 5, 2]).unwrap();
        let y = conv2d(&x, &k, 1, 0).unwrap();
        let flat = matmul(
            &x.clone().reshape([12, 5]).unwrap(),
            &k.clone().reshape([5, 2]).unwrap(),
        )
        .unwrap();
        assert_eq!(y.data(), flat.data());
    }

    #[test]
    fn all_ones_window_sum() {
        let x = Tensor::<f64>::ones([3, 3, 1]).unwrap();
        let k = Tensor::<f64>::ones([3, 3, 1, 1]).unwrap();
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y.at(&[1, 1, 0]), 9.0);
        assert_eq!(y.at(&[0, 0, 0]), 4.0);
    }

    #[test]
    fn conv_matches_six_loop_oracle() {
        let mut rng = Rng::new(21);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0)] {
            let x = rng.normal_tensor::<f32>(&[7, 6, 3]).unwrap();
            let k = rng.normal_tensor::<f32>(&[3, 3, 3, 4]).unwrap();
            let fast = conv2d(&x, &k, stride, pad).unwrap().cast::<f64>();
            let slow = naive_conv(&x.cast(), &k.cast(), stride, pad);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-5);
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = Tensor::<f32>::zeros([2, 2, 1]).unwrap();
        let k = Tensor::<f32>::zeros([5, 5, 1, 1]).unwrap();
        assert!(matches!(conv2d(&x, &k, 1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_examples() {
        let mut rng = Rng::new(2);
        let x = rng.normal_tensor::<f32>(&[3, 2, 2]).unwrap();
        assert_eq!(bilinear_upsample(&x, 1).unwrap(), x);

        let one = t(&[1, 1, 1], &[2.5]);
        let up = bilinear_upsample(&one, 4).unwrap();
        assert_eq!(up.shape(), &[4, 4, 1]);
        assert!(up.data().iter().all(|&v| v == 2.5));

        // Hand interpolation: per-axis source weights are [0, .25, .75, 1]
        // so each output is x + 2y over those coordinates.
        let x = t(&[2, 2, 1], &[0., 1., 2., 3.]);
        let expected = t(
            &[4, 4, 1],
            &[
                0.0, 0.25, 0.75, 1.0, //
                0.5, 0.75, 1.25, 1.5, //
                1.5, 1.75, 2.25, 2.5, //
                2.0, 2.25, 2.75, 3.0,
            ],
        );
        let up = bilinear_upsample(&x, 2).unwrap();
        assert!(up.max_abs_diff(&expected).unwrap() < 1e-12);
    }
}
