//! Weighted training objective and the named ablation configurations.

use crate::engine::{Graph, NodeId, Scalar};
use crate::error::{Error, Result};

/// Coefficients of the combined loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Gradient reversal scale for the domain-adversarial terms.
    pub alpha_da: f64,
    pub lambda_ae_s: f64,
    pub lambda_ae_t: f64,
    pub lambda_class: f64,
    pub lambda_breg: f64,
    /// Separate source and target encoders/decoders; otherwise one shared pair.
    pub separate_embedding: bool,
}

impl LossWeights {
    pub const fn new(
        alpha_da: f64,
        lambda_ae_s: f64,
        lambda_ae_t: f64,
        lambda_class: f64,
        lambda_breg: f64,
        separate_embedding: bool,
    ) -> Self {
        Self {
            alpha_da,
            lambda_ae_s,
            lambda_ae_t,
            lambda_class,
            lambda_breg,
            separate_embedding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha_da", self.alpha_da),
            ("lambda_ae_s", self.lambda_ae_s),
            ("lambda_ae_t", self.lambda_ae_t),
            ("lambda_class", self.lambda_class),
            ("lambda_breg", self.lambda_breg),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn uses_adversary(&self) -> bool {
        self.alpha_da > 0.0
    }
}

/// Scalar loss nodes for one step. Terms whose weight is zero may be left out.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub ae_s: Option<NodeId>,
    pub ae_t: Option<NodeId>,
    pub class_ce: Option<NodeId>,
    pub da_s: Option<NodeId>,
    pub da_t: Option<NodeId>,
    pub breg: Option<NodeId>,
}

/// Sums the active terms. Zero-weight terms are skipped rather than scaled, so
/// their gradients never reach the tape. The adversarial terms enter with
/// weight one; their sign and scale come from the reversal node upstream.
pub fn compose_loss<T: Scalar>(
    g: &mut Graph<T>,
    terms: &LossTerms,
    w: &LossWeights,
) -> Result<NodeId> {
    w.validate()?;
    let adv = if w.uses_adversary() { 1.0 } else { 0.0 };
    let parts = [
        ("ae_s", terms.ae_s, w.lambda_ae_s),
        ("ae_t", terms.ae_t, w.lambda_ae_t),
        ("class_ce", terms.class_ce, w.lambda_class),
        ("da_s", terms.da_s, adv),
        ("da_t", terms.da_t, adv),
        ("breg", terms.breg, w.lambda_breg),
    ];
    let mut total: Option<NodeId> = None;
    for (name, node, weight) in parts {
        if weight == 0.0 {
            continue;
        }
        let node = node.ok_or_else(|| {
            Error::Contract(format!(
                "loss term {name} has weight {weight} but was not computed"
            ))
        })?;
        if !g.value(node).is_scalar() {
            return Err(Error::Contract(format!("loss term {name} is not a scalar")));
        }
        let scaled = if weight == 1.0 {
            node
        } else {
            g.scale(node, weight)
        };
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(t, scaled)?,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => g.constant(crate::engine::Tensor::scalar(T::zero())),
    })
}

/// The twelve ablation rows, in table order.
pub const ABLATION_CONFIGS: [(&str, LossWeights); 12] = [
    ("Baseline", LossWeights::new(0.0, 0.0, 0.0, 1.0, 0.0, false)),
    (
        "Domain Adversarial (DA)",
        LossWeights::new(0.1, 0.0, 0.0, 1.0, 0.0, false),
    ),
    (
        "Bregman Divergence(BD)",
        LossWeights::new(0.0, 0.0, 0.0, 1.0, 1.0, false),
    ),
    (
        "Auto-Encoder (AE)",
        LossWeights::new(0.0, 1.0, 1.0, 1.0, 0.0, false),
    ),
    ("DA, AE", LossWeights::new(0.1, 1.0, 1.0, 1.0, 0.0, false)),
    ("BD, AE", LossWeights::new(0.0, 1.0, 1.0, 1.0, 1.0, false)),
    (
        "Direct Sum (DS)",
        LossWeights::new(0.0, 0.0, 0.0, 1.0, 0.0, true),
    ),
    ("DS, DA", LossWeights::new(0.1, 0.0, 0.0, 1.0, 0.0, true)),
    ("DS, BD", LossWeights::new(0.0, 0.0, 0.0, 1.0, 1.0, true)),
    (
        "DS, DA, AE",
        LossWeights::new(0.1, 1.0, 1.0, 1.0, 0.0, true),
    ),
    (
        "DS, BD, AE",
        LossWeights::new(0.0, 1.0, 1.0, 1.0, 1.0, true),
    ),
    (
        "Everything",
        LossWeights::new(0.1, 1.0, 1.0, 1.0, 1.0, true),
    ),
];

const ALIASES: [(&str, &str); 6] = [
    ("DA", "Domain Adversarial (DA)"),
    ("BD", "Bregman Divergence(BD)"),
    ("AE", "Auto-Encoder (AE)"),
    ("DS", "Direct Sum (DS)"),
    ("BD, BS, AE", "DS, BD, AE"),
    ("All", "Everything"),
];

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Resolves a configuration name (case and whitespace insensitive) to its
/// canonical spelling and weights.
pub fn lookup_config(name: &str) -> Result<(&'static str, LossWeights)> {
    let key = normalize(name);
    let canonical = ALIASES
        .iter()
        .find(|(alias, _)| normalize(alias) == key)
        .map(|&(_, c)| normalize(c))
        .unwrap_or(key);
    ABLATION_CONFIGS
        .iter()
        .find(|(n, _)| normalize(n) == canonical)
        .copied()
        .ok_or_else(|| Error::UnknownConfig {
            name: name.to_string(),
            valid: ABLATION_CONFIGS
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join("; "),
        })
}

pub fn ablation_config(name: &str) -> Result<LossWeights> {
    lookup_config(name).map(|(_, w)| w)
}
