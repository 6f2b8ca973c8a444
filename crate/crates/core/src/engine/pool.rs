//! Max pooling. Ties resolve to the first index in row-major scan order.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Pooled values plus the flat input index each output was taken from.
pub(crate) struct Pooled<T> {
    pub out: Tensor<T>,
    pub argmax: Vec<usize>,
}

fn nchw(op: &'static str, x_shape: &[usize]) -> Result<[usize; 4]> {
    x_shape.try_into().map_err(|_| {
        Error::shape(
            op,
            format!("input must be rank 4 [N,C,H,W], got {x_shape:?}"),
        )
    })
}

/// Generic window max: `rows[i]` / `cols[j]` give the input window per output cell.
fn window_max<T: Scalar>(
    x: &Tensor<T>,
    rows: &[(usize, usize)],
    cols: &[(usize, usize)],
) -> Pooled<T> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (oh, ow) = (rows.len(), cols.len());
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for &(r0, r1) in rows {
            for &(c0, c1) in cols {
                let mut best_idx = base + r0 * w + c0;
                let mut best = xd[best_idx];
                for r in r0..r1 {
                    for q in c0..c1 {
                        let idx = base + r * w + q;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Pooled {
        out: Tensor::new([n, c, oh, ow], out).expect("pool output"),
        argmax,
    }
}

pub(crate) fn maxpool2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<Pooled<T>> {
    const OP: &str = "maxpool2d";
    let [_, _, h, w] = nchw(OP, x.shape())?;
    if kernel == 0 || stride == 0 {
        return Err(Error::shape(OP, "kernel and stride must be >= 1"));
    }
    if kernel > h || kernel > w {
        return Err(Error::shape(
            OP,
            format!("kernel {kernel} larger than input {h}x{w}"),
        ));
    }
    let windows = |len: usize| -> Vec<(usize, usize)> {
        (0..(len - kernel) / stride + 1)
            .map(|i| (i * stride, i * stride + kernel))
            .collect()
    };
    Ok(window_max(x, &windows(h), &windows(w)))
}

/// Bin `i` of `out` over an axis of length `len`: `[floor(i*len/out), ceil((i+1)*len/out))`.
pub fn adaptive_bins(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| ((i * len) / out, ((i + 1) * len).div_ceil(out)))
        .collect()
}

pub(crate) fn adaptive_maxpool2d<T: Scalar>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Pooled<T>> {
    const OP: &str = "adaptive_maxpool2d";
    let [_, _, h, w] = nchw(OP, x.shape())?;
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::shape(
            OP,
            format!("output {out_h}x{out_w} not within input {h}x{w}"),
        ));
    }
    Ok(window_max(
        x,
        &adaptive_bins(h, out_h),
        &adaptive_bins(w, out_w),
    ))
}

/// Routes each upstream gradient to its recorded argmax.
pub(crate) fn unpool<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    gout: &Tensor<T>,
) -> Tensor<T> {
    let mut g = Tensor::zeros(input_shape.to_vec());
    let gd = g.data_mut();
    for (&idx, &v) in argmax.iter().zip(gout.data()) {
        gd[idx] = gd[idx] + v;
    }
    g
}
