use crate::engine::{BatchStats, Graph, NodeId, Scalar, Tensor, BN_MOMENTUM};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers such as batch-norm running statistics are not trainable.
    pub trainable: bool,
}

/// Owns every parameter and buffer of a model bundle.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.params[id.0].trainable)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Puts every parameter on the tape; trainable ones as gradient leaves when
    /// `with_grad`, everything else as constants.
    pub fn bind(&self, g: &mut Graph<T>, with_grad: bool) -> Binding {
        let nodes = self
            .params
            .iter()
            .map(|p| {
                if p.trainable && with_grad {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Binding { nodes }
    }

    /// Folds batch statistics into running averages.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        let m = BN_MOMENTUM;
        for u in updates {
            let c = u.stats.mean.len();
            if self.value(u.running_mean).numel() != c || self.value(u.running_var).numel() != c {
                return Err(Error::Contract(
                    "batch-norm update does not match buffer size".into(),
                ));
            }
            let unbias = if u.stats.count > 1 {
                u.stats.count as f64 / (u.stats.count - 1) as f64
            } else {
                1.0
            };
            for (r, &bm) in self.params[u.running_mean.0]
                .value
                .data_mut()
                .iter_mut()
                .zip(&u.stats.mean)
            {
                *r = T::of((1.0 - m) * r.as_f64() + m * bm);
            }
            for (r, &bv) in self.params[u.running_var.0]
                .value
                .data_mut()
                .iter_mut()
                .zip(&u.stats.var)
            {
                *r = T::of((1.0 - m) * r.as_f64() + m * bv * unbias);
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

/// Tape nodes for one forward pass, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Binding {
    nodes: Vec<NodeId>,
}

impl Binding {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, NodeId)> + '_ {
        self.nodes.iter().enumerate().map(|(i, &n)| (ParamId(i), n))
    }
}

#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// State threaded through a forward pass.
pub struct Ctx<'a, T: Scalar> {
    pub store: &'a ParamStore<T>,
    pub bind: &'a Binding,
    pub mode: Mode,
    /// Batch-norm statistics gathered in training mode, applied after the step.
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, bind: &'a Binding, mode: Mode) -> Self {
        Self {
            store,
            bind,
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn node(&self, id: ParamId) -> NodeId {
        self.bind.node(id)
    }
}
