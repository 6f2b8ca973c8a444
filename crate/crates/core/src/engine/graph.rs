//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation in creation order, so node indices are a
//! topological order by construction. `backward` walks that list in reverse.

use super::batchnorm::{self, BatchStats, BnSaved};
use super::conv::{self, ConvDims, ConvGeom};
use super::pool;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: NodeId,
        k: NodeId,
        b: NodeId,
        dims: ConvDims,
    },
    ConvTranspose2d {
        x: NodeId,
        k: NodeId,
        b: NodeId,
        dims: ConvDims,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: BnSaved<T>,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    Reverse {
        x: NodeId,
        alpha: T,
    },
    Scale {
        x: NodeId,
        c: T,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        x: NodeId,
    },
    SumProduct {
        x: NodeId,
        weights: Tensor<T>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
    Mse {
        a: NodeId,
        b: NodeId,
    },
    /// Scalar with externally supplied partial derivatives.
    Custom {
        inputs: Vec<NodeId>,
        partials: Vec<Tensor<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Trainable leaves always have an entry (zeros when unreachable from the root).
    /// Intermediate nodes and constants return `None`.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "node {} is not on this tape",
                id.0
            )));
        }
        Ok(())
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId, geom: ConvGeom) -> Result<NodeId> {
        let dims = conv::conv2d_dims(self.value(x), self.value(k), self.value(b), geom)?;
        let out = conv::conv2d_with(&dims, self.value(x), self.value(k), self.value(b));
        let rg = self.rg(&[x, k, b]);
        Ok(self.push(out, Op::Conv2d { x, k, b, dims }, rg))
    }

    pub fn conv2d_transpose(
        &mut self,
        x: NodeId,
        k: NodeId,
        b: NodeId,
        geom: ConvGeom,
    ) -> Result<NodeId> {
        let dims = conv::conv_transpose2d_dims(self.value(x), self.value(k), self.value(b), geom)?;
        let out = conv::conv2d_transpose_with(&dims, self.value(x), self.value(k), self.value(b));
        let rg = self.rg(&[x, k, b]);
        Ok(self.push(out, Op::ConvTranspose2d { x, k, b, dims }, rg))
    }

    /// Training-mode batch norm; returns the batch statistics for running averages.
    pub fn batchnorm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, BatchStats)> {
        let (y, saved, stats) =
            batchnorm::forward_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok((
            self.push(
                y,
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    saved,
                },
                rg,
            ),
            stats,
        ))
    }

    pub fn batchnorm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let (y, saved) = batchnorm::forward_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
            rg,
        ))
    }

    pub fn maxpool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> Result<NodeId> {
        let p = pool::maxpool2d(self.value(x), kernel, stride)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            p.out,
            Op::MaxPool {
                x,
                argmax: p.argmax,
            },
            rg,
        ))
    }

    pub fn adaptive_maxpool2d(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let p = pool::adaptive_maxpool2d(self.value(x), out_h, out_w)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            p.out,
            Op::MaxPool {
                x,
                argmax: p.argmax,
            },
            rg,
        ))
    }

    /// `x · wᵀ + b` for `x: [N, Din]`, `w: [Dout, Din]`, `b: [Dout]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || bs != [ws[0]] {
            return Err(Error::shape(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?} are incompatible"),
            ));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let (xd, wd, bd) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = Vec::with_capacity(n * dout);
        for row in xd.chunks_exact(din) {
            for (o, wrow) in wd.chunks_exact(din).enumerate() {
                let dot: T = row.iter().zip(wrow).map(|(&a, &c)| a * c).sum();
                out.push(dot + bd[o]);
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new([n, dout], out)?, Op::Dense { x, w, b }, rg))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Tanh => self.tanh(x),
        }
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(&[x]);
        self.push(out, Op::Tanh { x }, rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    /// Collapse all but the leading axis.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>();
        self.reshape(x, [n, rest])
    }

    /// Identity forward; the backward pass multiplies the upstream gradient by `-alpha`.
    pub fn gradient_reversal(&mut self, x: NodeId, alpha: f64) -> NodeId {
        let out = self.value(x).clone();
        let rg = self.rg(&[x]);
        self.push(
            out,
            Op::Reverse {
                x,
                alpha: T::of(alpha),
            },
            rg,
        )
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let c = T::of(c);
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale { x, c }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// `Σ x ⊙ weights` with constant weights; used to reduce vector outputs to a scalar.
    pub fn sum_product(&mut self, x: NodeId, weights: Tensor<T>) -> Result<NodeId> {
        if self.value(x).shape() != weights.shape() {
            return Err(Error::shape(
                "sum_product",
                format!("{:?} vs {:?}", self.value(x).shape(), weights.shape()),
            ));
        }
        let s: T = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::SumProduct { x, weights }, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.ndim() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {:?} vs {} labels", lv.shape(), labels.len()),
            ));
        }
        let k = lv.shape()[1];
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Index(format!(
                "label {l} at position {i} is out of range for {k} classes"
            )));
        }
        let mut probs = Vec::with_capacity(lv.numel());
        let mut total = 0.0f64;
        for (row, &label) in lv.data().chunks_exact(k).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let z: T = exps.iter().copied().sum();
            total += (z.ln() + max - row[label]).as_f64();
            probs.extend(exps.iter().map(|&e| e / z));
        }
        let n = labels.len();
        let loss = T::of(total / n as f64);
        let probs = Tensor::new([n, k], probs)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "mse",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let s: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum();
        let loss = s / T::of(av.numel() as f64);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { a, b }, rg))
    }

    /// Records a scalar whose partial derivatives w.r.t. `inputs` were computed elsewhere.
    pub fn custom_scalar(
        &mut self,
        inputs: &[NodeId],
        value: T,
        partials: Vec<Tensor<T>>,
    ) -> Result<NodeId> {
        if inputs.len() != partials.len() {
            return Err(Error::Contract(
                "custom_scalar: one partial per input required".into(),
            ));
        }
        for (&id, p) in inputs.iter().zip(&partials) {
            self.check(id)?;
            if self.value(id).shape() != p.shape() {
                return Err(Error::shape(
                    "custom_scalar",
                    format!(
                        "partial {:?} does not match input {:?}",
                        p.shape(),
                        self.value(id).shape()
                    ),
                ));
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Custom {
                inputs: inputs.to_vec(),
                partials,
            },
            rg,
        ))
    }

    /// Reverse accumulation from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        self.check(root)?;
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(self.value(root).shape().to_vec()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut emit = |id: NodeId, contrib: Tensor<T>| {
                if !self.nodes[id.0].requires_grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d { x, k, b, dims } => {
                    let (gx, gk, gb) =
                        conv::conv2d_backward(dims, self.value(*x), self.value(*k), &g);
                    emit(*x, gx);
                    emit(*k, gk);
                    emit(*b, gb);
                }
                Op::ConvTranspose2d { x, k, b, dims } => {
                    let (gx, gk, gb) =
                        conv::conv2d_transpose_backward(dims, self.value(*x), self.value(*k), &g);
                    emit(*x, gx);
                    emit(*k, gk);
                    emit(*b, gb);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    saved,
                } => {
                    let (gx, gg, gb) = batchnorm::backward(saved, self.value(*gamma), &g);
                    emit(*x, gx);
                    emit(*gamma, gg);
                    emit(*beta, gb);
                }
                Op::MaxPool { x, argmax } => {
                    emit(*x, pool::unpool(self.value(*x).shape(), argmax, &g));
                }
                Op::Dense { x, w, b } => {
                    let (gx, gw, gb) = dense_backward(self.value(*x), self.value(*w), &g);
                    emit(*x, gx);
                    emit(*w, gw);
                    emit(*b, gb);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (gv, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    emit(*x, gx);
                }
                Op::Tanh { x } => {
                    let mut gx = g;
                    for (gv, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *gv = *gv * (T::one() - y * y);
                    }
                    emit(*x, gx);
                }
                Op::Reshape { x } => {
                    let gx = g
                        .reshape(self.value(*x).shape().to_vec())
                        .expect("reshape grad");
                    emit(*x, gx);
                }
                Op::Reverse { x, alpha } => {
                    let a = *alpha;
                    emit(*x, g.map(|v| -(a * v)));
                }
                Op::Scale { x, c } => {
                    let c = *c;
                    emit(*x, g.map(|v| v * c));
                }
                Op::Add { a, b } => {
                    emit(*a, g.clone());
                    emit(*b, g);
                }
                Op::Sum { x } => {
                    emit(*x, Tensor::full(self.value(*x).shape().to_vec(), g.item()));
                }
                Op::SumProduct { x, weights } => {
                    let up = g.item();
                    emit(*x, weights.map(|w| w * up));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    labels,
                } => {
                    let k = probs.shape()[1];
                    let scale = g.item() / T::of(labels.len() as f64);
                    let mut gl = probs.clone();
                    let gd = gl.data_mut();
                    for (i, &l) in labels.iter().enumerate() {
                        gd[i * k + l] = gd[i * k + l] - T::one();
                    }
                    for v in gd.iter_mut() {
                        *v = *v * scale;
                    }
                    emit(*logits, gl);
                }
                Op::Mse { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let scale = T::of(2.0) * g.item() / T::of(av.numel() as f64);
                    let diff: Vec<T> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&p, &q)| (p - q) * scale)
                        .collect();
                    let ga = Tensor::new(av.shape().to_vec(), diff).expect("shape");
                    let gb = ga.map(|v| -v);
                    emit(*a, ga);
                    emit(*b, gb);
                }
                Op::Custom { inputs, partials } => {
                    let up = g.item();
                    for (id, p) in inputs.iter().zip(partials) {
                        emit(*id, p.map(|v| v * up));
                    }
                }
            }
        }
        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && slot.is_none() {
                *slot = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut gx = vec![T::zero(); n * din];
    let mut gw = vec![T::zero(); dout * din];
    let mut gb = vec![T::zero(); dout];
    for s in 0..n {
        let xrow = &xd[s * din..(s + 1) * din];
        let grow = &gd[s * dout..(s + 1) * dout];
        let gxrow = &mut gx[s * din..(s + 1) * din];
        for (o, &gv) in grow.iter().enumerate() {
            gb[o] = gb[o] + gv;
            let wrow = &wd[o * din..(o + 1) * din];
            let gwrow = &mut gw[o * din..(o + 1) * din];
            for i in 0..din {
                gxrow[i] = gxrow[i] + gv * wrow[i];
                gwrow[i] = gwrow[i] + gv * xrow[i];
            }
        }
    }
    (
        Tensor::new([n, din], gx).expect("shape"),
        Tensor::new([dout, din], gw).expect("shape"),
        Tensor::new([dout], gb).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64([2, 3], &[1., -2., 3., 0.5, 0., 9.]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones([2, 3]));
    }

    #[test]
    fn relu_values_and_kink() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64([3], &[-1.0, 2.0, 0.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0, 0.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1]));
        let y = g.tanh(x);
        assert_eq!(g.value(y).data(), &[0.0]);
    }

    #[test]
    fn dense_hand_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64([1, 2], &[1., 2.]).unwrap());
        let w = g.param(Tensor::from_f64([1, 2], &[1., 1.]).unwrap());
        let b = g.param(Tensor::from_f64([1], &[3.]).unwrap());
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);

        let x2 = g.constant(Tensor::from_f64([2, 2], &[1., 2., 3., 4.]).unwrap());
        let eye = g.param(Tensor::from_f64([2, 2], &[1., 0., 0., 1.]).unwrap());
        let zb = g.param(Tensor::zeros([2]));
        let y2 = g.dense(x2, eye, zb).unwrap();
        assert_eq!(g.value(y2), g.value(x2));
        assert!(g.dense(x2, w, zb).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let mut g = Graph::<f64>::new();
        let logits = g.param(Tensor::zeros([3, 2]));
        let ce = g.softmax_cross_entropy(logits, &[0, 1, 1]).unwrap();
        assert!((g.value(ce).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let sat = g.constant(Tensor::from_f64([1, 2], &[100.0, 0.0]).unwrap());
        let ce = g.softmax_cross_entropy(sat, &[0]).unwrap();
        assert!(g.value(ce).item() <= 1e-6);

        let err = g.softmax_cross_entropy(logits, &[0, 2, 1]).unwrap_err();
        assert!(matches!(err, Error::Index(_)), "{err}");
    }

    #[test]
    fn mse_cases() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64([1], &[0.0]).unwrap());
        let b = g.constant(Tensor::from_f64([1], &[2.0]).unwrap());
        let m = g.mse(a, b).unwrap();
        assert_eq!(g.value(m).item(), 4.0);
        let m0 = g.mse(a, a).unwrap();
        assert_eq!(g.value(m0).item(), 0.0);
        let c = g.constant(Tensor::zeros([2]));
        assert!(g.mse(a, c).is_err());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::ones([2]));
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn gradient_reversal_contract() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64([2], &[0.3, -0.7]).unwrap());
        let r = g.gradient_reversal(x, 0.1);
        assert_eq!(g.value(r), g.value(x));
        let s = g
            .sum_product(r, Tensor::from_f64([2], &[1.0, -2.0]).unwrap())
            .unwrap();
        let grads = g.backward(s).unwrap();
        let gx = grads.get(x).unwrap().data();
        assert!((gx[0] + 0.1).abs() < 1e-15 && (gx[1] - 0.2).abs() < 1e-15);

        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64([2], &[0.3, -0.7]).unwrap());
        let r = g.gradient_reversal(x, 0.0);
        let s = g.sum(r);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unused_leaves_get_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones([2]));
        let unused = g.param(Tensor::ones([3]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros([3]));
    }
}
