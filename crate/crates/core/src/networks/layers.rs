//! Parameterized layers. Weights are drawn uniformly from `±1/sqrt(fan_in)`;
//! biases start at zero.

use rand::Rng;

use super::params::{BnUpdate, Ctx, Mode, ParamId, ParamStore};
use crate::engine::{ConvGeom, Graph, NodeId, Scalar, Tensor, BN_EPS};
use crate::error::Result;

fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let w = fan_in_uniform(&[out_features, in_features], in_features, rng);
        let b = Tensor::zeros(vec![out_features]);
        Self {
            weight: store.add(format!("{name}.weight"), w, true),
            bias: store.add(format!("{name}.bias"), b, true),
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &Ctx<'_, T>,
        x: NodeId,
    ) -> Result<NodeId> {
        g.dense(x, ctx.node(self.weight), ctx.node(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl Conv2d {
    /// Kernel layout `[c_out, c_in, k, k]`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        geom: ConvGeom,
    ) -> Self {
        let fan_in = c_in * k * k;
        let w = fan_in_uniform(&[c_out, c_in, k, k], fan_in, rng);
        let b = Tensor::zeros(vec![c_out]);
        Self {
            weight: store.add(format!("{name}.weight"), w, true),
            bias: store.add(format!("{name}.bias"), b, true),
            geom,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &Ctx<'_, T>,
        x: NodeId,
    ) -> Result<NodeId> {
        g.conv2d(x, ctx.node(self.weight), ctx.node(self.bias), self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl ConvTranspose2d {
    /// Kernel layout `[c_in, c_out, k, k]`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        geom: ConvGeom,
    ) -> Self {
        let fan_in = c_out * k * k;
        let w = fan_in_uniform(&[c_in, c_out, k, k], fan_in, rng);
        let b = Tensor::zeros(vec![c_out]);
        Self {
            weight: store.add(format!("{name}.weight"), w, true),
            bias: store.add(format!("{name}.bias"), b, true),
            geom,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &Ctx<'_, T>,
        x: NodeId,
    ) -> Result<NodeId> {
        g.conv2d_transpose(x, ctx.node(self.weight), ctx.node(self.bias), self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.weight"), Tensor::ones([channels]), true),
            beta: store.add(format!("{name}.bias"), Tensor::zeros([channels]), true),
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros([channels]),
                false,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::ones([channels]),
                false,
            ),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &mut Ctx<'_, T>,
        x: NodeId,
    ) -> Result<NodeId> {
        let (gamma, beta) = (ctx.node(self.gamma), ctx.node(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = g.batchnorm_train(x, gamma, beta, BN_EPS)?;
                ctx.bn_updates.push(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    stats,
                });
                Ok(y)
            }
            Mode::Eval => {
                let rm = ctx.store.value(self.running_mean).to_f64_vec();
                let rv = ctx.store.value(self.running_var).to_f64_vec();
                g.batchnorm_eval(x, gamma, beta, &rm, &rv, BN_EPS)
            }
        }
    }
}
