//! 2-D convolution and transposed convolution kernels (NCHW layout).
//!
//! Work is split per sample; kernel/bias gradients are accumulated per sample
//! and then summed in sample order so results do not depend on thread count.

use std::ops::Range;

use rayon::prelude::*;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

/// Output extent of a cross-correlation.
pub fn conv_out_len(input: usize, kernel: usize, geom: ConvGeom) -> Option<usize> {
    let padded = input + 2 * geom.padding;
    if geom.stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / geom.stride + 1)
}

/// Output extent of a transposed convolution.
pub fn conv_transpose_out_len(input: usize, kernel: usize, geom: ConvGeom) -> Option<usize> {
    if geom.stride == 0 || input == 0 {
        return None;
    }
    ((input - 1) * geom.stride + kernel)
        .checked_sub(2 * geom.padding)
        .filter(|&v| v > 0)
}

/// Indices `a < len_a` such that `a * stride + k - pad` lies in `[0, len_b)`.
fn valid_range(k: usize, stride: usize, pad: usize, len_a: usize, len_b: usize) -> Range<usize> {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    // a*stride + k - pad <= len_b - 1
    let hi_num = len_b + pad;
    let hi = if hi_num < k + 1 {
        0
    } else {
        (hi_num - k - 1) / stride + 1
    };
    lo..hi.min(len_a).max(lo)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    /// Channels of the "image side" tensor (conv input / transpose output).
    pub c_img: usize,
    pub h_img: usize,
    pub w_img: usize,
    /// Channels of the "feature side" tensor (conv output / transpose input).
    pub c_feat: usize,
    pub h_feat: usize,
    pub w_feat: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    fn img_plane(&self) -> usize {
        self.h_img * self.w_img
    }
    fn feat_plane(&self) -> usize {
        self.h_feat * self.w_feat
    }
    fn kernel_len(&self) -> usize {
        self.c_img * self.c_feat * self.kh * self.kw
    }
}

fn expect_rank(op: &'static str, what: &str, t_shape: &[usize], rank: usize) -> Result<()> {
    if t_shape.len() != rank {
        return Err(Error::shape(
            op,
            format!("{what} must be rank {rank}, got shape {t_shape:?}"),
        ));
    }
    Ok(())
}

pub(crate) fn conv2d_dims<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    geom: ConvGeom,
) -> Result<ConvDims> {
    const OP: &str = "conv2d";
    expect_rank(OP, "input", x.shape(), 4)?;
    expect_rank(OP, "kernel", k.shape(), 4)?;
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kcin, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    if kcin != cin {
        return Err(Error::shape(
            OP,
            format!("kernel expects {kcin} input channels, input has {cin}"),
        ));
    }
    if b.shape() != [cout] {
        return Err(Error::shape(
            OP,
            format!("bias shape {:?} != [{cout}]", b.shape()),
        ));
    }
    if geom.stride == 0 {
        return Err(Error::shape(OP, "stride must be >= 1"));
    }
    let oh = conv_out_len(h, kh, geom).ok_or_else(|| {
        Error::shape(
            OP,
            format!(
                "height {h} + 2*{} padding < kernel height {kh}",
                geom.padding
            ),
        )
    })?;
    let ow = conv_out_len(w, kw, geom).ok_or_else(|| {
        Error::shape(
            OP,
            format!("width {w} + 2*{} padding < kernel width {kw}", geom.padding),
        )
    })?;
    Ok(ConvDims {
        n,
        c_img: cin,
        h_img: h,
        w_img: w,
        c_feat: cout,
        h_feat: oh,
        w_feat: ow,
        kh,
        kw,
        stride: geom.stride,
        pad: geom.padding,
    })
}

pub(crate) fn conv_transpose2d_dims<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    geom: ConvGeom,
) -> Result<ConvDims> {
    const OP: &str = "conv2d_transpose";
    expect_rank(OP, "input", x.shape(), 4)?;
    expect_rank(OP, "kernel", k.shape(), 4)?;
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kcin, cout, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    if kcin != cin {
        return Err(Error::shape(
            OP,
            format!("kernel expects {kcin} input channels, input has {cin}"),
        ));
    }
    if b.shape() != [cout] {
        return Err(Error::shape(
            OP,
            format!("bias shape {:?} != [{cout}]", b.shape()),
        ));
    }
    if geom.stride == 0 {
        return Err(Error::shape(OP, "stride must be >= 1"));
    }
    let oh = conv_transpose_out_len(h, kh, geom).ok_or_else(|| {
        Error::shape(
            OP,
            format!("padding {} too large for height {h}", geom.padding),
        )
    })?;
    let ow = conv_transpose_out_len(w, kw, geom).ok_or_else(|| {
        Error::shape(
            OP,
            format!("padding {} too large for width {w}", geom.padding),
        )
    })?;
    Ok(ConvDims {
        n,
        c_img: cout,
        h_img: oh,
        w_img: ow,
        c_feat: cin,
        h_feat: h,
        w_feat: w,
        kh,
        kw,
        stride: geom.stride,
        pad: geom.padding,
    })
}

/// Visits every (feature position, image position) pair linked by kernel tap
/// `(ki, kj)`: `img[(fh*s + ki - p), (fw*s + kj - p)]` with `feat[fh, fw]`.
#[inline]
fn for_each_tap(d: &ConvDims, ki: usize, kj: usize, mut f: impl FnMut(usize, usize)) {
    let rows = valid_range(ki, d.stride, d.pad, d.h_feat, d.h_img);
    let cols = valid_range(kj, d.stride, d.pad, d.w_feat, d.w_img);
    for fh in rows {
        let ih = fh * d.stride + ki - d.pad;
        let frow = fh * d.w_feat;
        let irow = ih * d.w_img;
        for fw in cols.clone() {
            let iw = fw * d.stride + kj - d.pad;
            f(frow + fw, irow + iw);
        }
    }
}

/// Both kernel layouts put the feature-side channel first: conv kernels are
/// `[Cout, Cin, ..]` and transpose kernels `[Cin, Cout, ..]`.
#[inline]
fn kernel_index(d: &ConvDims, cf: usize, ci: usize, ki: usize, kj: usize) -> usize {
    ((cf * d.c_img + ci) * d.kh + ki) * d.kw + kj
}

/// feat[n, cf] += Σ k[cf, ci] ⋆ img[n, ci]  (cross-correlation gather).
fn gather_into_feat<T: Scalar>(d: &ConvDims, img: &[T], kernel: &[T], feat: &mut [T]) {
    let (ip, fp) = (d.img_plane(), d.feat_plane());
    feat.par_chunks_mut(d.c_feat * fp)
        .enumerate()
        .for_each(|(n, fout)| {
            let img_n = &img[n * d.c_img * ip..(n + 1) * d.c_img * ip];
            for cf in 0..d.c_feat {
                let plane = &mut fout[cf * fp..(cf + 1) * fp];
                for ci in 0..d.c_img {
                    let iplane = &img_n[ci * ip..(ci + 1) * ip];
                    for ki in 0..d.kh {
                        for kj in 0..d.kw {
                            let wv = kernel[kernel_index(d, cf, ci, ki, kj)];
                            for_each_tap(d, ki, kj, |fi, ii| {
                                plane[fi] = plane[fi] + wv * iplane[ii]
                            });
                        }
                    }
                }
            }
        });
}

/// img[n, ci] += Σ k[cf, ci] scattered from feat[n, cf]  (adjoint of the gather).
fn scatter_into_img<T: Scalar>(d: &ConvDims, feat: &[T], kernel: &[T], img: &mut [T]) {
    let (ip, fp) = (d.img_plane(), d.feat_plane());
    img.par_chunks_mut(d.c_img * ip)
        .enumerate()
        .for_each(|(n, iout)| {
            let feat_n = &feat[n * d.c_feat * fp..(n + 1) * d.c_feat * fp];
            for ci in 0..d.c_img {
                let plane = &mut iout[ci * ip..(ci + 1) * ip];
                for cf in 0..d.c_feat {
                    let fplane = &feat_n[cf * fp..(cf + 1) * fp];
                    for ki in 0..d.kh {
                        for kj in 0..d.kw {
                            let wv = kernel[kernel_index(d, cf, ci, ki, kj)];
                            for_each_tap(d, ki, kj, |fi, ii| {
                                plane[ii] = plane[ii] + wv * fplane[fi]
                            });
                        }
                    }
                }
            }
        });
}

/// Σ_n img[n, ci] ⋆ feat[n, cf], in kernel layout.
fn kernel_grad<T: Scalar>(d: &ConvDims, img: &[T], feat: &[T]) -> Vec<T> {
    let (ip, fp) = (d.img_plane(), d.feat_plane());
    let partials: Vec<Vec<T>> = (0..d.n)
        .into_par_iter()
        .map(|n| {
            let mut gk = vec![T::zero(); d.kernel_len()];
            let img_n = &img[n * d.c_img * ip..(n + 1) * d.c_img * ip];
            let feat_n = &feat[n * d.c_feat * fp..(n + 1) * d.c_feat * fp];
            for cf in 0..d.c_feat {
                let fplane = &feat_n[cf * fp..(cf + 1) * fp];
                for ci in 0..d.c_img {
                    let iplane = &img_n[ci * ip..(ci + 1) * ip];
                    for ki in 0..d.kh {
                        for kj in 0..d.kw {
                            let mut acc = T::zero();
                            for_each_tap(d, ki, kj, |fi, ii| acc = acc + iplane[ii] * fplane[fi]);
                            let slot = &mut gk[kernel_index(d, cf, ci, ki, kj)];
                            *slot = *slot + acc;
                        }
                    }
                }
            }
            gk
        })
        .collect();
    sum_in_order(partials, d.kernel_len())
}

fn channel_sums<T: Scalar>(t: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let start = (s * c + ch) * plane;
            *o = *o + t[start..start + plane].iter().copied().sum::<T>();
        }
    }
    out
}

fn sum_in_order<T: Scalar>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a = *a + v;
        }
    }
    acc
}

fn broadcast_bias<T: Scalar>(bias: &[T], n: usize, plane: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * bias.len() * plane);
    for _ in 0..n {
        for &b in bias {
            out.extend(std::iter::repeat_n(b, plane));
        }
    }
    out
}

/// Cross-correlation `[N,Cin,H,W] ⋆ [Cout,Cin,kH,kW] + bias`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let d = conv2d_dims(x, k, b, geom)?;
    Ok(conv2d_with(&d, x, k, b))
}

pub(crate) fn conv2d_with<T: Scalar>(
    d: &ConvDims,
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
) -> Tensor<T> {
    let mut out = broadcast_bias(b.data(), d.n, d.feat_plane());
    gather_into_feat(d, x.data(), k.data(), &mut out);
    Tensor::new([d.n, d.c_feat, d.h_feat, d.w_feat], out).expect("conv2d output shape")
}

/// Gradients of conv2d w.r.t. (input, kernel, bias).
pub(crate) fn conv2d_backward<T: Scalar>(
    d: &ConvDims,
    x: &Tensor<T>,
    k: &Tensor<T>,
    gout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let mut gx = vec![T::zero(); x.numel()];
    scatter_into_img(d, gout.data(), k.data(), &mut gx);
    let gk = kernel_grad(d, x.data(), gout.data());
    let gb = channel_sums(gout.data(), d.n, d.c_feat, d.feat_plane());
    (
        Tensor::new(x.shape().to_vec(), gx).expect("shape"),
        Tensor::new(k.shape().to_vec(), gk).expect("shape"),
        Tensor::new([d.c_feat], gb).expect("shape"),
    )
}

/// Transposed convolution `[N,Cin,H,W]` with kernel `[Cin,Cout,kH,kW]`.
pub fn conv2d_transpose<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let d = conv_transpose2d_dims(x, k, b, geom)?;
    Ok(conv2d_transpose_with(&d, x, k, b))
}

pub(crate) fn conv2d_transpose_with<T: Scalar>(
    d: &ConvDims,
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
) -> Tensor<T> {
    let mut out = broadcast_bias(b.data(), d.n, d.img_plane());
    scatter_into_img(d, x.data(), k.data(), &mut out);
    Tensor::new([d.n, d.c_img, d.h_img, d.w_img], out).expect("conv2d_transpose output shape")
}

pub(crate) fn conv2d_transpose_backward<T: Scalar>(
    d: &ConvDims,
    x: &Tensor<T>,
    k: &Tensor<T>,
    gout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let mut gx = vec![T::zero(); x.numel()];
    gather_into_feat(d, gout.data(), k.data(), &mut gx);
    let gk = kernel_grad(d, gout.data(), x.data());
    let gb = channel_sums(gout.data(), d.n, d.c_img, d.img_plane());
    (
        Tensor::new(x.shape().to_vec(), gx).expect("shape"),
        Tensor::new(k.shape().to_vec(), gk).expect("shape"),
        Tensor::new([d.c_img], gb).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple loop over output positions with explicit bounds checks.
    fn conv_oracle(
        x: &Tensor<f64>,
        k: &Tensor<f64>,
        b: &Tensor<f64>,
        s: usize,
        p: usize,
    ) -> Vec<f64> {
        let [n, cin, h, w] = x.shape().try_into().unwrap();
        let [cout, _, kh, kw] = k.shape().try_into().unwrap();
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (w + 2 * p - kw) / s + 1;
        let xd = x.data();
        let kd = k.data();
        let mut out = vec![0.0; n * cout * oh * ow];
        for ni in 0..n {
            for co in 0..cout {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            for a in 0..kh {
                                for c in 0..kw {
                                    let r = (i * s + a) as isize - p as isize;
                                    let q = (j * s + c) as isize - p as isize;
                                    if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                        continue;
                                    }
                                    acc += kd[((co * cin + ci) * kh + a) * kw + c]
                                        * xd[((ni * cin + ci) * h + r as usize) * w + q as usize];
                                }
                            }
                        }
                        out[((ni * cout + co) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f32>::ones([1, 1, 2, 2]);
        let k = Tensor::<f32>::ones([1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros([1]);
        let y = conv2d(&x, &k, &b, ConvGeom::new(1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::uniform([2, 1, 4, 5], -1.0, 1.0, &mut rng);
        let k = Tensor::<f32>::ones([1, 1, 1, 1]);
        let b = Tensor::<f32>::zeros([1]);
        let y = conv2d(&x, &k, &b, ConvGeom::new(1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(s, p) in &[(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)] {
            let x = Tensor::<f64>::uniform([2, 2, 5, 6], -1.0, 1.0, &mut rng);
            let k = Tensor::<f64>::uniform([3, 2, 3, 3], -1.0, 1.0, &mut rng);
            let b = Tensor::<f64>::uniform([3], -1.0, 1.0, &mut rng);
            let y = conv2d(&x, &k, &b, ConvGeom::new(s, p)).unwrap();
            let want = conv_oracle(&x, &k, &b, s, p);
            for (a, e) in y.data().iter().zip(&want) {
                assert!((a - e).abs() <= 1e-6, "stride {s} pad {p}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn spec_case_single_channel_two_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform([1, 1, 5, 5], -1.0, 1.0, &mut rng);
        let k = Tensor::<f64>::uniform([2, 1, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::zeros([2]);
        let y = conv2d(&x, &k, &b, ConvGeom::new(1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3, 3]);
        let want = conv_oracle(&x, &k, &b, 1, 0);
        assert!(y
            .data()
            .iter()
            .zip(&want)
            .all(|(a, e)| (a - e).abs() <= 1e-6));
    }

    #[test]
    fn transpose_shapes() {
        let x = Tensor::<f32>::ones([1, 1, 2, 2]);
        let k = Tensor::<f32>::ones([1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros([1]);
        let y = conv2d_transpose(&x, &k, &b, ConvGeom::new(2, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);

        let x = Tensor::<f32>::ones([1, 1, 5, 5]);
        let k = Tensor::<f32>::ones([1, 1, 5, 5]);
        let y = conv2d_transpose(&x, &k, &b, ConvGeom::new(3, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 15, 15]);
    }

    #[test]
    fn dimension_errors_are_descriptive() {
        let x = Tensor::<f32>::ones([1, 2, 4, 4]);
        let k = Tensor::<f32>::ones([1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros([1]);
        let msg = conv2d(&x, &k, &b, ConvGeom::new(1, 0))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("input channels"), "{msg}");
        let x = Tensor::<f32>::ones([1, 1, 2, 2]);
        let msg = conv2d(&x, &k, &b, ConvGeom::new(1, 0))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("kernel height"), "{msg}");
    }

    #[test]
    fn valid_range_bounds() {
        // stride 2, pad 1, kernel tap 0: a*2 - 1 in [0, 5) -> a in 1..=2 for len_a 3
        assert_eq!(valid_range(0, 2, 1, 3, 5), 1..3);
        assert_eq!(valid_range(2, 1, 0, 3, 5), 0..3);
        // tap beyond the image never valid
        assert_eq!(valid_range(0, 1, 4, 2, 2).len(), 0);
    }
}
