use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{accuracy, confusion_matrix, correct_two_class};
use super::optim::Adam;
use super::plan::{DatasetKind, DomainSpec, ExperimentPlan};
use crate::alignment::{bregman_loss, domain_adversarial_loss, Domain, GrlConfig};
use crate::data::{
    generate_direct_sum_toy, load_idx_dataset, normalize_pixels, pad_features, scale_max_abs,
    select_classes, split_train_eval, LabeledDataset, SynthSpec,
};
use crate::engine::{Graph, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::networks::{ArchKind, ArchitectureSpec, Ctx, Mode, ModelBundle};
use crate::objective::{compose_loss, LossTerms, LossWeights};

const EVAL_CHUNK: usize = 256;

/// Independent seed for one purpose within a trial.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_TOY: u64 = 1;
const STREAM_SELECT_SOURCE: u64 = 2;
const STREAM_SELECT_TARGET: u64 = 3;
const STREAM_SPLIT_SOURCE: u64 = 4;
const STREAM_SPLIT_TARGET: u64 = 5;
const STREAM_SHUFFLE: u64 = 6;

/// IDX datasets loaded once and shared by every trial.
#[derive(Clone, Debug, Default)]
pub struct RawData {
    pub source: Option<LabeledDataset>,
    pub target: Option<LabeledDataset>,
}

pub fn load_raw(plan: &ExperimentPlan) -> Result<RawData> {
    let load = |d: &DomainSpec, domain| -> Result<Option<LabeledDataset>> {
        match &d.dataset {
            DatasetKind::Toy => Ok(None),
            DatasetKind::Idx(name) => load_idx_dataset(&plan.data_root, name, domain).map(Some),
        }
    };
    Ok(RawData {
        source: load(&plan.source, Domain::Source)?,
        target: load(&plan.target, Domain::Target)?,
    })
}

/// Held-out splits of both domains for one trial.
#[derive(Clone, Debug)]
pub struct TrialData {
    pub src_train: LabeledDataset,
    pub src_eval: LabeledDataset,
    pub tgt_train: LabeledDataset,
    pub tgt_eval: LabeledDataset,
    pub source_arch: ArchitectureSpec,
    pub target_arch: ArchitectureSpec,
}

fn restrict(ds: &LabeledDataset, spec: &DomainSpec, seed: u64) -> Result<LabeledDataset> {
    if spec.classes.is_empty() && spec.n_max.is_none() {
        return Ok(ds.clone());
    }
    let classes = if spec.classes.is_empty() {
        let mut present: Vec<u32> = ds.labels.iter().map(|&l| ds.classes[l]).collect();
        present.sort_unstable();
        present.dedup();
        present
    } else {
        spec.classes.clone()
    };
    select_classes(ds, &classes, spec.n_max.unwrap_or(usize::MAX), seed)
}

fn arch_for(ds: &LabeledDataset, plan: &ExperimentPlan) -> ArchitectureSpec {
    match ds.sample_shape() {
        [d] => ArchitectureSpec {
            kind: ArchKind::Mlp {
                hidden: plan.mlp_hidden.clone(),
            },
            input_shape: vec![*d],
            latent_dim: plan.latent_dim,
        },
        _ => ArchitectureSpec {
            input_shape: ds.sample_shape().to_vec(),
            ..ArchitectureSpec::conv28(plan.latent_dim)
        },
    }
}

/// Builds the per-trial datasets. Toy vectors are scaled into `[-1, 1]`;
/// with a shared embedding the narrower domain is zero-padded to the wider
/// one so both pass through the same encoder.
pub fn prepare_trial(
    plan: &ExperimentPlan,
    raw: &RawData,
    weights: &LossWeights,
    seed: u64,
) -> Result<TrialData> {
    let (src, tgt) = if plan.is_toy() {
        let spec = SynthSpec {
            seed: sub_seed(seed, STREAM_TOY),
            ..plan.toy.clone()
        };
        let (s, t) = generate_direct_sum_toy(&spec)?;
        let s = restrict(
            &scale_max_abs(&s).0,
            &plan.source,
            sub_seed(seed, STREAM_SELECT_SOURCE),
        )?;
        let t = restrict(
            &scale_max_abs(&t).0,
            &plan.target,
            sub_seed(seed, STREAM_SELECT_TARGET),
        )?;
        (s, t)
    } else {
        let missing = || Error::Config("image datasets were not loaded".into());
        let s = raw.source.as_ref().ok_or_else(missing)?;
        let t = raw.target.as_ref().ok_or_else(missing)?;
        let s = normalize_pixels(&restrict(
            s,
            &plan.source,
            sub_seed(seed, STREAM_SELECT_SOURCE),
        )?);
        let t = normalize_pixels(&restrict(
            t,
            &plan.target,
            sub_seed(seed, STREAM_SELECT_TARGET),
        )?);
        (s, t)
    };
    if src.num_classes() != tgt.num_classes() {
        return Err(Error::Config(format!(
            "source has {} classes but target has {}",
            src.num_classes(),
            tgt.num_classes()
        )));
    }
    let (src, tgt) = match (src.sample_shape(), tgt.sample_shape()) {
        ([ds], [dt]) if !weights.separate_embedding && ds != dt => {
            let w = (*ds).max(*dt);
            (pad_features(&src, w)?, pad_features(&tgt, w)?)
        }
        _ => (src, tgt),
    };
    let (src_train, src_eval) = split_train_eval(
        &src,
        plan.eval_fraction,
        sub_seed(seed, STREAM_SPLIT_SOURCE),
    )?;
    let (tgt_train, tgt_eval) = split_train_eval(
        &tgt,
        plan.eval_fraction,
        sub_seed(seed, STREAM_SPLIT_TARGET),
    )?;
    let source_arch = arch_for(&src, plan);
    let target_arch = arch_for(&tgt, plan);
    Ok(TrialData {
        src_train,
        src_eval,
        tgt_train,
        tgt_eval,
        source_arch,
        target_arch,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Reported in abort diagnostics.
    pub trial: usize,
}

impl TrainOptions {
    pub fn from_plan(plan: &ExperimentPlan, trial: usize) -> Self {
        Self {
            epochs: plan.epochs,
            batch_size: plan.batch_size,
            learning_rate: plan.learning_rate,
            trial,
        }
    }
}

pub const TERM_NAMES: [&str; 6] = ["ae_s", "ae_t", "class_ce", "da_s", "da_t", "breg"];

/// Mean per-step values over one epoch; `None` for inactive terms.
#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub terms: [Option<f64>; 6],
}

/// Endless reshuffled index stream over one dataset.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

fn terms_array(t: &LossTerms) -> [Option<NodeId>; 6] {
    [t.ae_s, t.ae_t, t.class_ce, t.da_s, t.da_t, t.breg]
}

/// Forward pass of one paired step. Only terms with nonzero weight are built.
pub fn build_step_loss<T: Scalar>(
    g: &mut Graph<T>,
    ctx: &mut Ctx<'_, T>,
    bundle: &ModelBundle<T>,
    weights: &LossWeights,
    xs: Tensor<T>,
    ys: &[usize],
    xt: Tensor<T>,
) -> Result<(NodeId, LossTerms)> {
    let needs_target =
        weights.lambda_ae_t > 0.0 || weights.uses_adversary() || weights.lambda_breg > 0.0;
    let xs = g.constant(xs);
    let zs = bundle.f_source.forward(g, ctx, xs)?;
    let mut terms = LossTerms::default();
    if weights.lambda_class > 0.0 {
        let logits = bundle.classifier.forward(g, ctx, zs)?;
        terms.class_ce = Some(g.softmax_cross_entropy(logits, ys)?);
    }
    if weights.lambda_ae_s > 0.0 {
        let rec = bundle.d_source.forward(g, ctx, zs)?;
        terms.ae_s = Some(g.mse(rec, xs)?);
    }
    if needs_target {
        let xt = g.constant(xt);
        let zt = bundle.f_target.forward(g, ctx, xt)?;
        if weights.lambda_ae_t > 0.0 {
            let rec = bundle.d_target.forward(g, ctx, zt)?;
            terms.ae_t = Some(g.mse(rec, xt)?);
        }
        if weights.uses_adversary() {
            let grl = GrlConfig::new(weights.alpha_da)?;
            let d = domain_adversarial_loss(g, zs, zt, &bundle.domain_classifier, ctx, grl)?;
            terms.da_s = Some(d.source);
            terms.da_t = Some(d.target);
        }
        if weights.lambda_breg > 0.0 {
            terms.breg = Some(bregman_loss(g, zs, zt)?);
        }
    }
    let loss = compose_loss(g, &terms, weights)?;
    Ok((loss, terms))
}

/// Trains a fresh bundle initialized from `seed`.
pub fn train_bundle(
    data: &TrialData,
    weights: &LossWeights,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(ModelBundle<f32>, Vec<EpochLog>)> {
    let num_classes = data.src_train.num_classes();
    let mut bundle = ModelBundle::<f32>::new(
        &data.source_arch,
        &data.target_arch,
        num_classes,
        !weights.separate_embedding,
        seed,
    )?;
    let mut adam = Adam::new(&bundle.store, opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_SHUFFLE));
    let (ns, nt) = (data.src_train.len(), data.tgt_train.len());
    if ns < 2 || nt < 2 {
        return Err(Error::BatchSize {
            needed: 2,
            got: ns.min(nt),
        });
    }
    let mut src_stream = BatchStream::new(ns, &mut rng);
    let mut tgt_stream = BatchStream::new(nt, &mut rng);
    let steps = ns.max(nt).div_ceil(opts.batch_size);
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut sums = [0.0f64; 6];
        let mut loss_sum = 0.0;
        let mut active = [false; 6];
        for step in 0..steps {
            let bs = src_stream.next(opts.batch_size, &mut rng);
            let bt = tgt_stream.next(opts.batch_size, &mut rng);
            let xs = data.src_train.samples.gather_rows(&bs);
            let ys: Vec<usize> = bs.iter().map(|&i| data.src_train.labels[i]).collect();
            let xt = data.tgt_train.samples.gather_rows(&bt);
            let mut g = Graph::new();
            let bind = bundle.store.bind(&mut g, true);
            let mut ctx = Ctx::new(&bundle.store, &bind, Mode::Train);
            let (loss, terms) = build_step_loss(&mut g, &mut ctx, &bundle, weights, xs, &ys, xt)?;
            for (k, node) in terms_array(&terms).into_iter().enumerate() {
                let Some(node) = node else { continue };
                let v = g.value(node).item() as f64;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        trial: opts.trial,
                        epoch,
                        step,
                        term: TERM_NAMES[k].into(),
                        value: v,
                    });
                }
                sums[k] += v;
                active[k] = true;
            }
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    trial: opts.trial,
                    epoch,
                    step,
                    term: "total".into(),
                    value: lv,
                });
            }
            loss_sum += lv;
            let updates = std::mem::take(&mut ctx.bn_updates);
            let grads = g.backward(loss)?;
            adam.step(&mut bundle.store, &bind, &grads);
            bundle.store.apply_bn_updates(&updates)?;
        }
        let n = steps as f64;
        let mut terms = [None; 6];
        for k in 0..6 {
            if active[k] {
                terms[k] = Some(sums[k] / n);
            }
        }
        history.push(EpochLog {
            epoch,
            loss: loss_sum / n,
            terms,
        });
    }
    Ok((bundle, history))
}

/// Accuracy figures of a trained bundle on one dataset.
#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Two-class flip-corrected accuracy; equals `accuracy` otherwise.
    pub corrected: f64,
    pub confusion: Vec<Vec<usize>>,
}

pub fn predict_all(
    bundle: &ModelBundle<f32>,
    domain: Domain,
    ds: &LabeledDataset,
) -> Result<Vec<usize>> {
    let mut pred = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        pred.extend(bundle.predict(domain, &ds.samples.gather_rows(chunk))?);
    }
    Ok(pred)
}

pub fn evaluate(
    bundle: &ModelBundle<f32>,
    domain: Domain,
    ds: &LabeledDataset,
) -> Result<Evaluation> {
    let pred = predict_all(bundle, domain, ds)?;
    let k = bundle.num_classes();
    let acc = accuracy(&pred, &ds.labels)?;
    Ok(Evaluation {
        accuracy: acc,
        corrected: correct_two_class(acc, k),
        confusion: confusion_matrix(&pred, &ds.labels, k),
    })
}

/// Prepares data for `trial_seed` and trains one bundle with `config`.
pub fn train(
    plan: &ExperimentPlan,
    raw: &RawData,
    weights: &LossWeights,
    trial: usize,
    trial_seed: u64,
) -> Result<(TrialData, ModelBundle<f32>, Vec<EpochLog>)> {
    let data = prepare_trial(plan, raw, weights, trial_seed)?;
    let (bundle, history) = train_bundle(
        &data,
        weights,
        &TrainOptions::from_plan(plan, trial),
        trial_seed,
    )?;
    Ok((data, bundle, history))
}
