//! Self-checks run by `dsalign check`: finite-difference gradient checks for
//! every tape op and for whole networks, Bregman identities, the KDE-vs-integral
//! comparison and the gradient reversal contract.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{
    bregman, bregman_with, estimate_diag_covariance, normalized_divergence_with, Domain,
    LatentBatch,
};
use crate::engine::{ConvGeom, Graph, NodeId, Tensor, BN_EPS};
use crate::error::Result;
use crate::harness::build_step_loss;
use crate::networks::{ArchitectureSpec, Ctx, Mode, ModelBundle};
use crate::objective::LossWeights;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed error (or other headline number).
    pub worst: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, worst: f64, tol: f64) -> Self {
        let passed = worst <= tol;
        Self {
            name: name.into(),
            passed,
            worst,
            detail: format!("worst {worst:.3e} (tol {tol:.0e})"),
        }
    }

    fn failed(name: impl Into<String>, msg: String) -> Self {
        Self {
            name: name.into(),
            passed: false,
            worst: f64::INFINITY,
            detail: msg,
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

type Builder<'a> = dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + 'a;

fn eval_at(inputs: &[Tensor<f64>], build: &Builder<'_>) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    Ok(g.value(root).item())
}

/// Worst relative error between tape gradients and central differences over
/// every coordinate of every input.
pub fn finite_difference_error(
    inputs: &[Tensor<f64>],
    build: &Builder<'_>,
    h: f64,
    floor: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    let grads = g.backward(root)?;
    let mut worst = 0.0f64;
    for (i, &id) in ids.iter().enumerate() {
        let analytic = grads.get(id).expect("leaf gradient").clone();
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval_at(&plus, build)? - eval_at(&minus, build)?) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[j], numeric, floor));
        }
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Contracts an op output with fixed random weights so every output
/// coordinate receives a distinct upstream gradient.
fn project(g: &mut Graph<f64>, out: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.value(out).shape());
    g.sum_product(out, w)
}

fn op_check(name: &str, inputs: Vec<Tensor<f64>>, build: &Builder<'_>) -> CheckOutcome {
    match finite_difference_error(&inputs, build, FD_STEP, REL_FLOOR) {
        Ok(w) => CheckOutcome::new(format!("autodiff/{name}"), w, OP_TOLERANCE),
        Err(e) => CheckOutcome::failed(format!("autodiff/{name}"), e.to_string()),
    }
}

/// Finite-difference checks for each differentiable op.
pub fn check_ops() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut r = |shape: &[usize]| rand_tensor(&mut rng, shape);
    let mut out = Vec::new();
    out.push(op_check(
        "conv2d",
        vec![r(&[2, 2, 5, 5]), r(&[3, 2, 3, 3]), r(&[3])],
        &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2], ConvGeom::new(2, 1))?;
            project(g, y, 1)
        },
    ));
    out.push(op_check(
        "conv2d_transpose",
        vec![r(&[2, 3, 3, 3]), r(&[3, 2, 3, 3]), r(&[2])],
        &|g, v| {
            let y = g.conv2d_transpose(v[0], v[1], v[2], ConvGeom::new(2, 1))?;
            project(g, y, 2)
        },
    ));
    out.push(op_check(
        "batchnorm_train",
        vec![r(&[4, 3, 2, 2]), r(&[3]), r(&[3])],
        &|g, v| {
            let (y, _) = g.batchnorm_train(v[0], v[1], v[2], BN_EPS)?;
            project(g, y, 3)
        },
    ));
    out.push(op_check(
        "batchnorm_eval",
        vec![r(&[4, 3, 2, 2]), r(&[3]), r(&[3])],
        &|g, v| {
            let y = g.batchnorm_eval(
                v[0],
                v[1],
                v[2],
                &[0.1, -0.2, 0.3],
                &[0.5, 1.5, 2.0],
                BN_EPS,
            )?;
            project(g, y, 4)
        },
    ));
    out.push(op_check("maxpool2d", vec![r(&[2, 2, 4, 4])], &|g, v| {
        let y = g.maxpool2d(v[0], 2, 2)?;
        project(g, y, 5)
    }));
    out.push(op_check(
        "adaptive_maxpool2d",
        vec![r(&[2, 2, 5, 7])],
        &|g, v| {
            let y = g.adaptive_maxpool2d(v[0], 2, 2)?;
            project(g, y, 6)
        },
    ));
    out.push(op_check(
        "dense",
        vec![r(&[3, 4]), r(&[5, 4]), r(&[5])],
        &|g, v| {
            let y = g.dense(v[0], v[1], v[2])?;
            project(g, y, 7)
        },
    ));
    out.push(op_check("relu", vec![r(&[3, 4])], &|g, v| {
        let y = g.relu(v[0]);
        project(g, y, 8)
    }));
    out.push(op_check("tanh", vec![r(&[3, 4])], &|g, v| {
        let y = g.tanh(v[0]);
        project(g, y, 9)
    }));
    out.push(op_check("reshape", vec![r(&[2, 6])], &|g, v| {
        let y = g.reshape(v[0], [3, 4])?;
        project(g, y, 10)
    }));
    out.push(op_check(
        "scale_add_sum",
        vec![r(&[3, 2]), r(&[3, 2])],
        &|g, v| {
            let a = g.scale(v[0], 2.5);
            let y = g.add(a, v[1])?;
            let t = g.tanh(y);
            Ok(g.sum(t))
        },
    ));
    out.push(op_check("sum_product", vec![r(&[4])], &|g, v| {
        g.sum_product(v[0], Tensor::from_f64([4], &[1.0, -2.0, 0.5, 3.0])?)
    }));
    out.push(op_check(
        "softmax_cross_entropy",
        vec![r(&[4, 3])],
        &|g, v| g.softmax_cross_entropy(v[0], &[0, 2, 1, 2]),
    ));
    out.push(op_check("mse", vec![r(&[3, 2]), r(&[3, 2])], &|g, v| {
        g.mse(v[0], v[1])
    }));
    out
}

/// Gradient reversal has no function whose derivative it is, so it is
/// checked against its contract instead of finite differences: identity
/// forward, upstream gradients of the encoder scaled by `-α`, head untouched.
pub fn check_grl_contract() -> CheckOutcome {
    const NAME: &str = "grl/contract";
    let alpha = 0.1;
    let run = |reverse: bool| -> Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&mut rng, &[6, 4]));
        let w_enc = g.param(rand_tensor(&mut rng, &[3, 4]));
        let b_enc = g.param(rand_tensor(&mut rng, &[3]));
        let w_head = g.param(rand_tensor(&mut rng, &[2, 3]));
        let b_head = g.param(rand_tensor(&mut rng, &[2]));
        let z = g.dense(x, w_enc, b_enc)?;
        let zr = if reverse {
            g.gradient_reversal(z, alpha)
        } else {
            z
        };
        let logits = g.dense(zr, w_head, b_head)?;
        let loss = g.softmax_cross_entropy(logits, &[0, 1, 0, 1, 1, 0])?;
        let grads = g.backward(loss)?;
        Ok((
            g.value(zr).clone(),
            grads.get(w_enc).unwrap().clone(),
            grads.get(w_head).unwrap().clone(),
        ))
    };
    let outcome = (|| -> Result<CheckOutcome> {
        let (fwd_r, enc_r, head_r) = run(true)?;
        let (fwd, enc, head) = run(false)?;
        if fwd_r
            .data()
            .iter()
            .zip(fwd.data())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Ok(CheckOutcome::failed(
                NAME,
                "forward pass is not the identity".into(),
            ));
        }
        let mut worst = head_r.max_abs_diff(&head);
        for (a, b) in enc_r.data().iter().zip(enc.data()) {
            worst = worst.max((a + alpha * b).abs());
        }
        Ok(CheckOutcome::new(NAME, worst, 1e-7))
    })();
    outcome.unwrap_or_else(|e| CheckOutcome::failed(NAME, e.to_string()))
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, domain: Domain) -> LatentBatch {
    let shift: f64 = rng.random_range(-1.0..1.0);
    let scale: f64 = rng.random_range(0.3..2.0);
    let v = (0..n * d)
        .map(|_| shift + scale * rng.random_range(-1.0..1.0))
        .collect();
    LatentBatch::new(v, n, d, domain).expect("valid batch")
}

/// Analytic Bregman gradients against central differences of the divergence
/// with the covariances frozen at the evaluation point.
pub fn check_bregman_gradients(instances: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "bregman/gradient-oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let h = 1e-5;
    for _ in 0..instances {
        let d = [1, 3, 10][rng.random_range(0..3)];
        let ns = rng.random_range(2..=16);
        let s = random_batch(&mut rng, ns, d, Domain::Source);
        let nt = rng.random_range(2..=16);
        let t = random_batch(&mut rng, nt, d, Domain::Target);
        let (cs, ct) = match (estimate_diag_covariance(&s), estimate_diag_covariance(&t)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return CheckOutcome::failed(NAME, e.to_string()),
        };
        let div = bregman_with(&s, &t, &cs, &ct).expect("valid pair");
        let value = |s: &LatentBatch, t: &LatentBatch| {
            bregman_with(s, t, &cs, &ct).expect("valid pair").value
        };
        let bump = |batch: &LatentBatch, k: usize, delta: f64| {
            let mut v = batch.points().to_vec();
            v[k] += delta;
            LatentBatch::new(v, batch.len(), batch.dim(), batch.domain()).expect("valid batch")
        };
        for k in 0..s.points().len() {
            let num = (value(&bump(&s, k, h), &t) - value(&bump(&s, k, -h), &t)) / (2.0 * h);
            worst = worst.max(rel_err(div.grad_source[k], num, REL_FLOOR));
        }
        for k in 0..t.points().len() {
            let num = (value(&s, &bump(&t, k, h)) - value(&s, &bump(&t, k, -h))) / (2.0 * h);
            worst = worst.max(rel_err(div.grad_target[k], num, REL_FLOOR));
        }
    }
    CheckOutcome::new(NAME, worst, OP_TOLERANCE)
}

/// Zero on identical batches, symmetry, and nonnegativity with a shared
/// covariance.
pub fn check_bregman_identities(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zero = 0.0f64;
    let mut sym = 0.0f64;
    let mut neg = 0.0f64;
    for i in 0..1000 {
        let d = [1, 3, 10][i % 3];
        let ns = rng.random_range(2..=16);
        let s = random_batch(&mut rng, ns, d, Domain::Source);
        let nt = rng.random_range(2..=16);
        let t = random_batch(&mut rng, nt, d, Domain::Target);
        if i < 100 {
            let same = LatentBatch::new(s.points().to_vec(), s.len(), d, Domain::Target).unwrap();
            let div = bregman(&s, &same).unwrap();
            let gnorm = div
                .grad_source
                .iter()
                .chain(&div.grad_target)
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            zero = zero.max(div.value.abs() / 1e-9).max(gnorm / 1e-8);
            let ab = bregman(&s, &t).unwrap().value;
            let ts = LatentBatch::new(t.points().to_vec(), t.len(), d, Domain::Source).unwrap();
            let st = LatentBatch::new(s.points().to_vec(), s.len(), d, Domain::Target).unwrap();
            sym = sym.max((ab - bregman(&ts, &st).unwrap().value).abs());
        }
        let mut pooled = s.points().to_vec();
        pooled.extend_from_slice(t.points());
        let all = LatentBatch::new(pooled, s.len() + t.len(), d, Domain::Source).unwrap();
        let cov = estimate_diag_covariance(&all).unwrap();
        let v = bregman_with(&s, &t, &cov, &cov).unwrap().value;
        neg = neg.max(-v);
    }
    vec![
        CheckOutcome::new("bregman/identical-batches", zero, 1.0),
        CheckOutcome::new("bregman/symmetry", sym, 1e-6),
        CheckOutcome::new("bregman/shared-cov-nonnegative", neg, 1e-9),
    ]
}

/// Normalized-kernel divergence against trapezoidal integration of the
/// squared KDE difference, for 1-D batches.
pub fn check_kde_integral(pairs: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let ns = rng.random_range(2..=16);
        let s = random_batch(&mut rng, ns, 1, Domain::Source);
        let nt = rng.random_range(2..=16);
        let t = random_batch(&mut rng, nt, 1, Domain::Target);
        let cs = estimate_diag_covariance(&s).unwrap();
        let ct = estimate_diag_covariance(&t).unwrap();
        let closed = normalized_divergence_with(&s, &t, &cs, &ct).unwrap();
        let kde = |b: &LatentBatch, var: f64, y: f64| -> f64 {
            let norm = (2.0 * std::f64::consts::PI * var).sqrt().recip();
            b.points()
                .iter()
                .map(|&p| norm * (-(y - p).powi(2) / (2.0 * var)).exp())
                .sum::<f64>()
                / b.len() as f64
        };
        let (vs, vt) = (cs.variances()[0], ct.variances()[0]);
        let pad = 12.0 * vs.max(vt).sqrt();
        let lo = s
            .points()
            .iter()
            .chain(t.points())
            .cloned()
            .fold(f64::INFINITY, f64::min)
            - pad;
        let hi = s
            .points()
            .iter()
            .chain(t.points())
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            + pad;
        let steps = 20_000;
        let dx = (hi - lo) / steps as f64;
        let f = |y: f64| (kde(&s, vs, y) - kde(&t, vt, y)).powi(2);
        let mut integral = 0.5 * (f(lo) + f(hi));
        for k in 1..steps {
            integral += f(lo + k as f64 * dx);
        }
        integral *= dx;
        worst = worst.max(rel_err(closed, integral, 1e-12));
    }
    CheckOutcome::new("bregman/kde-vs-trapezoid", worst, 1e-3)
}

/// Samples parameter coordinates of a whole bundle and compares the tape
/// gradient of the training loss with central differences.
///
/// Two terms are left out. Gradient reversal makes the encoder gradient
/// deliberately differ from the loss derivative, and the Bregman kernel
/// covariances are held constant on the tape. Both have their own checks.
pub fn check_network(
    name: &str,
    arch: &ArchitectureSpec,
    separate: bool,
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let full = format!("network/{name}");
    let run = || -> Result<(f64, usize)> {
        let weights = LossWeights::new(0.0, 1.0, 1.0, 1.0, 0.0, separate);
        let mut bundle = ModelBundle::<f64>::new(arch, arch, 2, !separate, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut shape = vec![4];
        shape.extend_from_slice(&arch.input_shape);
        let xs = rand_tensor(&mut rng, &shape);
        let xt = rand_tensor(&mut rng, &shape);
        let ys = [0, 1, 1, 0];
        let loss_and_grads =
            |b: &ModelBundle<f64>, grads: bool| -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
                let mut g = Graph::new();
                let bind = b.store.bind(&mut g, true);
                let mut ctx = Ctx::new(&b.store, &bind, Mode::Train);
                let (loss, _) =
                    build_step_loss(&mut g, &mut ctx, b, &weights, xs.clone(), &ys, xt.clone())?;
                let v = g.value(loss).item();
                if !grads {
                    return Ok((v, Vec::new()));
                }
                let gr = g.backward(loss)?;
                Ok((
                    v,
                    b.store
                        .ids()
                        .map(|id| gr.get(bind.node(id)).cloned())
                        .collect(),
                ))
            };
        let (_, grads) = loss_and_grads(&bundle, true)?;
        let ids: Vec<_> = bundle.store.trainable_ids().collect();
        let h = 1e-6;
        let (base, _) = loss_and_grads(&bundle, false)?;
        let mut worst = 0.0f64;
        let mut kinks = 0;
        for _ in 0..samples {
            let id = ids[rng.random_range(0..ids.len())];
            let k = rng.random_range(0..bundle.store.value(id).numel());
            let orig = bundle.store.value(id).data()[k];
            bundle.store.value_mut(id).data_mut()[k] = orig + h;
            let (up, _) = loss_and_grads(&bundle, false)?;
            bundle.store.value_mut(id).data_mut()[k] = orig - h;
            let (down, _) = loss_and_grads(&bundle, false)?;
            bundle.store.value_mut(id).data_mut()[k] = orig;
            // one-sided slopes disagree when the step straddles a ReLU or
            // max-pool kink; the central difference is meaningless there
            let (fwd, bwd) = ((up - base) / h, (base - down) / h);
            if rel_err(fwd, bwd, 1e-4) > NETWORK_TOLERANCE {
                kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[id.index()].as_ref().map_or(0.0, |t| t.data()[k]);
            worst = worst.max(rel_err(analytic, numeric, 1e-4));
        }
        Ok((worst, kinks))
    };
    match run() {
        Ok((w, kinks)) => {
            let mut o = CheckOutcome::new(full, w, NETWORK_TOLERANCE);
            o.passed &= kinks * 10 <= samples;
            o.detail = format!("{}, {kinks}/{samples} samples on a kink", o.detail);
            o
        }
        Err(e) => CheckOutcome::failed(full, e.to_string()),
    }
}

pub fn run_all() -> Vec<CheckOutcome> {
    let mut out = check_ops();
    out.push(check_grl_contract());
    out.push(check_bregman_gradients(100, 7));
    out.extend(check_bregman_identities(11));
    out.push(check_kde_integral(20, 13));
    out.push(check_network(
        "conv28",
        &ArchitectureSpec::conv28(3),
        true,
        60,
        17,
    ));
    out.push(check_network(
        "conv28-shared",
        &ArchitectureSpec::conv28(10),
        false,
        40,
        23,
    ));
    out.push(check_network(
        "mlp",
        &ArchitectureSpec::mlp(3, 3),
        true,
        60,
        19,
    ));
    out
}
