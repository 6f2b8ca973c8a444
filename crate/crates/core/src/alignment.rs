//! Latent-space alignment losses.
//!
//! The quadratic divergence `∫(P_S − P_T)²` is estimated with Gaussian kernel
//! density estimates of both embedded batches. Kernel covariances are diagonal,
//! taken from the per-feature batch variances plus [`TIKHONOV`], and are held
//! constant when differentiating. The kernel is left unnormalized, so the
//! estimate differs from the integral by per-term normalization constants;
//! [`normalized_divergence_with`] applies them.
//!
//! The adversarial alternative routes latents through a gradient reversal
//! node into the domain classifier.

use crate::engine::{Graph, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::networks::{Ctx, DomainClassifier};

/// Added to every feature variance before inversion.
pub const TIKHONOV: f64 = 1e-3;

/// Above this reversal scale adversarial training tends to destabilize.
pub const GRL_STABLE_ALPHA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Domain-classifier label: source 0, target 1.
    pub fn label(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

/// A batch of embedded points `y_k ∈ H`, row-major `[n, d]`, held in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    points: Vec<f64>,
    n: usize,
    d: usize,
    domain: Domain,
}

impl LatentBatch {
    pub fn new(points: Vec<f64>, n: usize, d: usize, domain: Domain) -> Result<Self> {
        if n == 0 || d == 0 || points.len() != n * d {
            return Err(Error::shape(
                "latent_batch",
                format!(
                    "{} values cannot form a non-empty [{n}, {d}] batch",
                    points.len()
                ),
            ));
        }
        Ok(Self {
            points,
            n,
            d,
            domain,
        })
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, domain: Domain) -> Result<Self> {
        if t.ndim() != 2 {
            return Err(Error::shape(
                "latent_batch",
                format!("expected [n, d], got {:?}", t.shape()),
            ));
        }
        Self::new(t.to_f64_vec(), t.shape()[0], t.shape()[1], domain)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }
}

/// Diagonal covariance under the independent-feature assumption.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagCovariance {
    variances: Vec<f64>,
}

impl DiagCovariance {
    /// Fixed variances (no regularization added). Entries must be positive.
    pub fn pinned(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() || variances.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Config(format!(
                "covariance entries must be positive, got {variances:?}"
            )));
        }
        Ok(Self { variances })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn inverse(&self) -> Vec<f64> {
        self.variances.iter().map(|v| 1.0 / v).collect()
    }

    /// `Σ_a + Σ_b`, the kernel covariance of a cross term.
    pub fn sum(&self, other: &Self) -> Self {
        Self {
            variances: self
                .variances
                .iter()
                .zip(&other.variances)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

/// Per-feature population variance plus [`TIKHONOV`].
pub fn estimate_diag_covariance(batch: &LatentBatch) -> Result<DiagCovariance> {
    if batch.n < 2 {
        return Err(Error::BatchSize {
            needed: 2,
            got: batch.n,
        });
    }
    let n = batch.n as f64;
    let mut mean = vec![0.0; batch.d];
    for i in 0..batch.n {
        for (m, &v) in mean.iter_mut().zip(batch.point(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; batch.d];
    for i in 0..batch.n {
        for ((s, &v), &m) in var.iter_mut().zip(batch.point(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    Ok(DiagCovariance {
        variances: var.into_iter().map(|s| s / n + TIKHONOV).collect(),
    })
}

/// `exp(−½ Σ_j δ_j² / σ_j)`, unnormalized.
pub fn gaussian_kernel(delta: &[f64], sigma: &[f64]) -> f64 {
    debug_assert_eq!(delta.len(), sigma.len());
    let q: f64 = delta.iter().zip(sigma).map(|(d, s)| d * d / s).sum();
    (-0.5 * q).exp()
}

/// Kernel matrix `K[i][k] = G(b_k − a_i)` for a given diagonal inverse covariance.
fn kernel_matrix(a: &LatentBatch, b: &LatentBatch, inv: &[f64]) -> Vec<f64> {
    let mut k = Vec::with_capacity(a.n * b.n);
    for i in 0..a.n {
        let ai = a.point(i);
        for j in 0..b.n {
            let q: f64 = b
                .point(j)
                .iter()
                .zip(ai)
                .zip(inv)
                .map(|((bv, av), w)| (bv - av) * (bv - av) * w)
                .sum();
            k.push((-0.5 * q).exp());
        }
    }
    k
}

/// `out[i] += scale · Σ_k K[i][k] · Σ⁻¹ (b_k − a_i)`.
fn accumulate_pull(
    a: &LatentBatch,
    b: &LatentBatch,
    k: &[f64],
    inv: &[f64],
    scale: f64,
    out: &mut [f64],
) {
    let d = a.d;
    for i in 0..a.n {
        let ai = a.point(i);
        let gi = &mut out[i * d..(i + 1) * d];
        for j in 0..b.n {
            let w = k[i * b.n + j] * scale;
            for ((g, (&bv, &av)), &iv) in gi.iter_mut().zip(b.point(j).iter().zip(ai)).zip(inv) {
                *g += w * iv * (bv - av);
            }
        }
    }
}

/// Kernel covariances for the three pairwise sums.
#[derive(Clone, Debug)]
pub struct PairCovariances {
    pub source_source: DiagCovariance,
    pub target_target: DiagCovariance,
    pub source_target: DiagCovariance,
}

impl PairCovariances {
    pub fn new(cov_s: &DiagCovariance, cov_t: &DiagCovariance) -> Self {
        Self {
            source_source: cov_s.sum(cov_s),
            target_target: cov_t.sum(cov_t),
            source_target: cov_s.sum(cov_t),
        }
    }
}

/// Value and per-point gradients of the divergence estimate.
#[derive(Clone, Debug)]
pub struct Divergence {
    pub value: f64,
    /// `∂D/∂y^S`, row-major `[n_S, d]`.
    pub grad_source: Vec<f64>,
    /// `∂D/∂y^T`, row-major `[n_T, d]`.
    pub grad_target: Vec<f64>,
}

fn check_pair(src: &LatentBatch, tgt: &LatentBatch) -> Result<()> {
    if src.d != tgt.d {
        return Err(Error::shape(
            "bregman_divergence",
            format!("source dimension {} != target dimension {}", src.d, tgt.d),
        ));
    }
    Ok(())
}

fn evaluate(
    src: &LatentBatch,
    tgt: &LatentBatch,
    cov: &PairCovariances,
    with_grad: bool,
) -> Divergence {
    let (ns, nt) = (src.n as f64, tgt.n as f64);
    let inv_ss = cov.source_source.inverse();
    let inv_tt = cov.target_target.inverse();
    let inv_st = cov.source_target.inverse();

    let k_ss = kernel_matrix(src, src, &inv_ss);
    let k_tt = kernel_matrix(tgt, tgt, &inv_tt);
    // Rows over source points, columns over target points: G(y^T_k − y^S_j).
    let k_st = kernel_matrix(src, tgt, &inv_st);

    let s_ss: f64 = k_ss.iter().sum();
    let s_tt: f64 = k_tt.iter().sum();
    let s_st: f64 = k_st.iter().sum();
    let value = s_ss / (ns * ns) + s_tt / (nt * nt) - 2.0 * s_st / (ns * nt);

    let mut grad_source = vec![0.0; src.n * src.d];
    let mut grad_target = vec![0.0; tgt.n * tgt.d];
    if with_grad {
        accumulate_pull(src, src, &k_ss, &inv_ss, 2.0 / (ns * ns), &mut grad_source);
        accumulate_pull(src, tgt, &k_st, &inv_st, -2.0 / (ns * nt), &mut grad_source);
        accumulate_pull(tgt, tgt, &k_tt, &inv_tt, 2.0 / (nt * nt), &mut grad_target);
        let k_ts = transpose(&k_st, src.n, tgt.n);
        accumulate_pull(tgt, src, &k_ts, &inv_st, -2.0 / (ns * nt), &mut grad_target);
    }
    Divergence {
        value,
        grad_source,
        grad_target,
    }
}

fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// Divergence estimate with batch-estimated covariances.
pub fn bregman_divergence(src: &LatentBatch, tgt: &LatentBatch) -> Result<f64> {
    Ok(bregman(src, tgt)?.value)
}

/// Analytic gradients `(∂D/∂y^S, ∂D/∂y^T)` with batch-estimated covariances.
pub fn bregman_gradients(
    src: &LatentBatch,
    tgt: &LatentBatch,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let div = bregman(src, tgt)?;
    Ok((
        Tensor::new([src.n, src.d], div.grad_source)?,
        Tensor::new([tgt.n, tgt.d], div.grad_target)?,
    ))
}

/// Value and gradients in one pass with batch-estimated covariances.
pub fn bregman(src: &LatentBatch, tgt: &LatentBatch) -> Result<Divergence> {
    check_pair(src, tgt)?;
    let cov_s = estimate_diag_covariance(src)?;
    let cov_t = estimate_diag_covariance(tgt)?;
    Ok(evaluate(
        src,
        tgt,
        &PairCovariances::new(&cov_s, &cov_t),
        true,
    ))
}

/// Value and gradients with caller-supplied (e.g. pinned) covariances.
pub fn bregman_with(
    src: &LatentBatch,
    tgt: &LatentBatch,
    cov_s: &DiagCovariance,
    cov_t: &DiagCovariance,
) -> Result<Divergence> {
    check_pair(src, tgt)?;
    if cov_s.dim() != src.d || cov_t.dim() != tgt.d {
        return Err(Error::shape(
            "bregman_divergence",
            "covariance dimension does not match batch",
        ));
    }
    Ok(evaluate(
        src,
        tgt,
        &PairCovariances::new(cov_s, cov_t),
        true,
    ))
}

/// Divergence with every kernel sum scaled by its Gaussian normalization
/// `(2π)^{-d/2} |Σ_{*,*}|^{-1/2}`; equals `∫(P̂_S − P̂_T)²` for the KDEs
/// `P̂_* = (1/n) Σ_k N(y_k, Σ_*)`.
pub fn normalized_divergence_with(
    src: &LatentBatch,
    tgt: &LatentBatch,
    cov_s: &DiagCovariance,
    cov_t: &DiagCovariance,
) -> Result<f64> {
    check_pair(src, tgt)?;
    let cov = PairCovariances::new(cov_s, cov_t);
    let norm = |c: &DiagCovariance| -> f64 {
        c.variances()
            .iter()
            .map(|v| (2.0 * std::f64::consts::PI * v).sqrt().recip())
            .product()
    };
    let (ns, nt) = (src.n as f64, tgt.n as f64);
    let s_ss: f64 = kernel_matrix(src, src, &cov.source_source.inverse())
        .iter()
        .sum();
    let s_tt: f64 = kernel_matrix(tgt, tgt, &cov.target_target.inverse())
        .iter()
        .sum();
    let s_st: f64 = kernel_matrix(src, tgt, &cov.source_target.inverse())
        .iter()
        .sum();
    Ok(
        norm(&cov.source_source) * s_ss / (ns * ns) + norm(&cov.target_target) * s_tt / (nt * nt)
            - 2.0 * norm(&cov.source_target) * s_st / (ns * nt),
    )
}

/// Records the divergence between two latent batches on the tape. Covariances
/// are estimated from the current values and treated as constants.
pub fn bregman_loss<T: Scalar>(g: &mut Graph<T>, src: NodeId, tgt: NodeId) -> Result<NodeId> {
    let sb = LatentBatch::from_tensor(g.value(src), Domain::Source)?;
    let tb = LatentBatch::from_tensor(g.value(tgt), Domain::Target)?;
    let div = bregman(&sb, &tb)?;
    let to_t = |v: Vec<f64>, shape: &[usize]| Tensor::<T>::from_f64(shape.to_vec(), &v);
    let gs = to_t(div.grad_source, g.value(src).shape())?;
    let gt = to_t(div.grad_target, g.value(tgt).shape())?;
    g.custom_scalar(&[src, tgt], T::of(div.value), vec![gs, gt])
}

/// Gradient reversal scale `α_DA`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrlConfig {
    alpha: f64,
}

impl GrlConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Config(format!(
                "gradient reversal alpha must be >= 0, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Soft limit: values above [`GRL_STABLE_ALPHA`] are allowed but flagged.
    pub fn exceeds_stable_range(&self) -> bool {
        self.alpha > GRL_STABLE_ALPHA
    }
}

/// Identity on the forward pass; gradients flowing back are scaled by `−α`.
pub fn grl_forward<T: Scalar>(g: &mut Graph<T>, latent: NodeId, grl: GrlConfig) -> NodeId {
    g.gradient_reversal(latent, grl.alpha)
}

/// Domain cross-entropy terms, one per domain.
#[derive(Clone, Copy, Debug)]
pub struct DomainLosses {
    pub source: NodeId,
    pub target: NodeId,
}

/// Cross-entropy of the domain classifier on reversed latents (source label 0,
/// target label 1). Minimizing it trains the domain head while the encoders
/// receive `−α`-scaled gradients.
pub fn domain_adversarial_loss<T: Scalar>(
    g: &mut Graph<T>,
    src_latent: NodeId,
    tgt_latent: NodeId,
    head: &DomainClassifier,
    ctx: &Ctx<'_, T>,
    grl: GrlConfig,
) -> Result<DomainLosses> {
    let term = |g: &mut Graph<T>, z: NodeId, domain: Domain| -> Result<NodeId> {
        let reversed = grl_forward(g, z, grl);
        let logits = head.forward(g, ctx, reversed)?;
        let n = g.value(z).shape()[0];
        g.softmax_cross_entropy(logits, &vec![domain.label(); n])
    };
    let source = term(g, src_latent, Domain::Source)?;
    let target = term(g, tgt_latent, Domain::Target)?;
    Ok(DomainLosses { source, target })
}
