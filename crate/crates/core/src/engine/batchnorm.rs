//! Per-channel batch normalization for `[N, C, ...]` tensors.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<f64>,
    /// Elements per channel.
    pub count: usize,
}

/// Normalized activations kept for the backward pass.
#[derive(Clone)]
pub(crate) struct BnSaved<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Training mode couples samples through the batch statistics.
    pub train: bool,
}

pub(crate) struct BnDims {
    pub n: usize,
    pub c: usize,
    pub plane: usize,
}

pub(crate) fn bn_dims<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<BnDims> {
    const OP: &str = "batchnorm2d";
    if x.ndim() < 2 {
        return Err(Error::shape(
            OP,
            format!("input must be [N, C, ...], got {:?}", x.shape()),
        ));
    }
    let c = x.shape()[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            OP,
            format!(
                "gamma {:?} / beta {:?} must both be [{c}]",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(BnDims {
        n: x.shape()[0],
        c,
        plane: x.shape()[2..].iter().product(),
    })
}

fn for_channel<T: Scalar>(d: &BnDims, data: &[T], ch: usize, mut f: impl FnMut(usize, T)) {
    for s in 0..d.n {
        let start = (s * d.c + ch) * d.plane;
        for (i, &v) in data[start..start + d.plane].iter().enumerate() {
            f(start + i, v);
        }
    }
}

fn affine<T: Scalar>(d: &BnDims, x_hat: &Tensor<T>, gamma: &[T], beta: &[T]) -> Tensor<T> {
    let mut out = x_hat.clone();
    let od = out.data_mut();
    for ch in 0..d.c {
        for s in 0..d.n {
            let start = (s * d.c + ch) * d.plane;
            for v in &mut od[start..start + d.plane] {
                *v = gamma[ch] * *v + beta[ch];
            }
        }
    }
    out
}

pub(crate) fn forward_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BnSaved<T>, BatchStats)> {
    let d = bn_dims(x, gamma, beta)?;
    let count = d.n * d.plane;
    let mut mean = vec![0.0; d.c];
    let mut var = vec![0.0; d.c];
    let mut inv_std = Vec::with_capacity(d.c);
    let mut x_hat = x.clone();
    for ch in 0..d.c {
        let mut sum = 0.0;
        for_channel(&d, x.data(), ch, |_, v| sum += v.as_f64());
        let mu = sum / count as f64;
        let mut sq = 0.0;
        for_channel(&d, x.data(), ch, |_, v| {
            let dv = v.as_f64() - mu;
            sq += dv * dv;
        });
        let sigma2 = sq / count as f64;
        let inv = T::of(1.0 / (sigma2 + eps).sqrt());
        let mu_t = T::of(mu);
        let xh = x_hat.data_mut();
        for_channel(&d, x.data(), ch, |i, v| xh[i] = (v - mu_t) * inv);
        mean[ch] = mu;
        var[ch] = sigma2;
        inv_std.push(inv);
    }
    let y = affine(&d, &x_hat, gamma.data(), beta.data());
    Ok((
        y,
        BnSaved {
            x_hat,
            inv_std,
            train: true,
        },
        BatchStats { mean, var, count },
    ))
}

pub(crate) fn forward_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let d = bn_dims(x, gamma, beta)?;
    if running_mean.len() != d.c || running_var.len() != d.c {
        return Err(Error::shape(
            "batchnorm2d",
            "running statistics do not match channel count",
        ));
    }
    let mut x_hat = x.clone();
    let mut inv_std = Vec::with_capacity(d.c);
    for ch in 0..d.c {
        let inv = T::of(1.0 / (running_var[ch] + eps).sqrt());
        let mu = T::of(running_mean[ch]);
        let xh = x_hat.data_mut();
        for_channel(&d, x.data(), ch, |i, v| xh[i] = (v - mu) * inv);
        inv_std.push(inv);
    }
    let y = affine(&d, &x_hat, gamma.data(), beta.data());
    Ok((
        y,
        BnSaved {
            x_hat,
            inv_std,
            train: false,
        },
    ))
}

/// Gradients w.r.t. (input, gamma, beta).
pub(crate) fn backward<T: Scalar>(
    saved: &BnSaved<T>,
    gamma: &Tensor<T>,
    gout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let shape = saved.x_hat.shape();
    let d = BnDims {
        n: shape[0],
        c: shape[1],
        plane: shape[2..].iter().product(),
    };
    let m = T::of((d.n * d.plane) as f64);
    let xh = saved.x_hat.data();
    let gd = gout.data();
    let mut gx = Tensor::zeros(shape.to_vec());
    let mut g_gamma = Vec::with_capacity(d.c);
    let mut g_beta = Vec::with_capacity(d.c);
    for ch in 0..d.c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for_channel(&d, gd, ch, |i, g| {
            sum_g = sum_g + g;
            sum_gx = sum_gx + g * xh[i];
        });
        g_beta.push(sum_g);
        g_gamma.push(sum_gx);
        let gam = gamma.data()[ch];
        let inv = saved.inv_std[ch];
        let gxd = gx.data_mut();
        if saved.train {
            // dx = γ·inv/M · (M·g − Σg − x̂·Σ(g·x̂))
            let scale = gam * inv / m;
            for_channel(&d, gd, ch, |i, g| {
                gxd[i] = scale * (m * g - sum_g - xh[i] * sum_gx);
            });
        } else {
            for_channel(&d, gd, ch, |i, g| gxd[i] = g * gam * inv);
        }
    }
    (
        gx,
        Tensor::new([d.c], g_gamma).expect("shape"),
        Tensor::new([d.c], g_beta).expect("shape"),
    )
}
