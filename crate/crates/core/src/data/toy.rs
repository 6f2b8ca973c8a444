//! Two-class heterogeneous toy problem: 2-D source clusters split by the sign
//! of `x`, 3-D target clusters that share the `(x, y)` location of source
//! class B and are split by the sign of `z`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::LabeledDataset;
use crate::alignment::Domain;
use crate::engine::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub source_means: [[f64; 2]; 2],
    pub target_means: [[f64; 3]; 2],
    pub std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_per_class: 500,
            source_means: [[-2.0, 0.0], [2.0, 0.0]],
            target_means: [[2.0, 0.0, 2.0], [2.0, 0.0, -2.0]],
            std: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::Config(format!(
                "toy std must be positive, got {}",
                self.std
            )));
        }
        if self.n_per_class == 0 {
            return Err(Error::Config("toy n_per_class must be at least 1".into()));
        }
        Ok(())
    }
}

fn parse_point<const D: usize>(line: usize, v: &str) -> Result<[f64; D]> {
    let vals: Vec<f64> = v
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Plan {
            line,
            msg: format!("bad coordinate in {v:?}: {e}"),
        })?;
    vals.try_into().map_err(|_| Error::Plan {
        line,
        msg: format!("expected {D} coordinates, got {v:?}"),
    })
}

impl SynthSpec {
    /// Reads `key = value` lines (`#` comments) over the defaults. Keys:
    /// `n_per_class`, `std`, `seed`, `source_mean_a`, `source_mean_b`,
    /// `target_mean_a`, `target_mean_b` (points as comma lists).
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Plan {
                line: n,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |e: &dyn std::fmt::Display| Error::Plan {
                line: n,
                msg: format!("{k}: {e}"),
            };
            match k {
                "n_per_class" => s.n_per_class = v.parse().map_err(|e| bad(&e))?,
                "std" => s.std = v.parse().map_err(|e| bad(&e))?,
                "seed" => s.seed = v.parse().map_err(|e| bad(&e))?,
                "source_mean_a" => s.source_means[0] = parse_point(n, v)?,
                "source_mean_b" => s.source_means[1] = parse_point(n, v)?,
                "target_mean_a" => s.target_means[0] = parse_point(n, v)?,
                "target_mean_b" => s.target_means[1] = parse_point(n, v)?,
                _ => {
                    return Err(Error::Plan {
                        line: n,
                        msg: format!("unknown key {k:?}"),
                    })
                }
            }
        }
        s.validate()?;
        Ok(s)
    }
}

fn clusters<const D: usize>(
    means: &[[f64; D]; 2],
    n: usize,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    domain: Domain,
) -> Result<LabeledDataset> {
    let mut data = Vec::with_capacity(2 * n * D);
    let mut labels = Vec::with_capacity(2 * n);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..n {
            data.extend(mean.iter().map(|&m| (m + noise.sample(rng)) as f32));
            labels.push(k);
        }
    }
    LabeledDataset::new(Tensor::new([2 * n, D], data)?, labels, vec![0, 1], domain)
}

/// Source (2-D) and target (3-D) datasets, `n_per_class` samples per class.
pub fn generate_direct_sum_toy(spec: &SynthSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let source = clusters(
        &spec.source_means,
        spec.n_per_class,
        &noise,
        &mut rng,
        Domain::Source,
    )?;
    let target = clusters(
        &spec.target_means,
        spec.n_per_class,
        &noise,
        &mut rng,
        Domain::Target,
    )?;
    Ok((source, target))
}
