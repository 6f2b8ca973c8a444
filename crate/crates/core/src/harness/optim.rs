use crate::engine::{Gradients, Scalar, Tensor};
use crate::networks::{Binding, ParamStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adaptive moment estimation over every trainable parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    lr: f64,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
                .collect()
        };
        Self {
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, bind: &Binding, grads: &Gradients<T>) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let (one, eps) = (T::one(), T::of(ADAM_EPS));
        let step_size = T::of(self.lr / c1);
        let c2_sqrt = T::of(c2.sqrt());
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let Some(g) = grads.get(bind.node(id)) else {
                continue;
            };
            let k = id.index();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.value_mut(id).data_mut();
            for (((pi, mi), vi), &gi) in p
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *pi = *pi - step_size * *mi / ((*vi).sqrt() / c2_sqrt + eps);
            }
        }
    }
}
