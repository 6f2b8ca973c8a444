//! Plain-text experiment plans: one `key = value` per line, `#` starts a
//! comment.

use std::path::PathBuf;

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::objective::{lookup_config, ABLATION_CONFIGS};

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_MC_TRIALS: usize = 5;
pub const DEFAULT_EVAL_FRACTION: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// The synthetic 2-D/3-D cluster problem.
    Toy,
    /// IDX files under `<data_root>/<name>/`.
    Idx(String),
}

impl DatasetKind {
    fn parse(v: &str) -> Self {
        if v.eq_ignore_ascii_case("toy") {
            DatasetKind::Toy
        } else {
            DatasetKind::Idx(v.to_ascii_lowercase())
        }
    }

    pub fn name(&self) -> &str {
        match self {
            DatasetKind::Toy => "toy",
            DatasetKind::Idx(n) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub dataset: DatasetKind,
    /// Original class labels to keep, in label order; empty keeps every class.
    pub classes: Vec<u32>,
    pub n_max: Option<usize>,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Toy,
            classes: Vec::new(),
            n_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    /// Canonical ablation names, run in order.
    pub configs: Vec<String>,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub toy: SynthSpec,
    pub latent_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mc_trials: usize,
    pub seed_base: u64,
    pub eval_fraction: f64,
    pub data_root: PathBuf,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            configs: vec!["Everything".into()],
            source: DomainSpec::default(),
            target: DomainSpec::default(),
            toy: SynthSpec::default(),
            latent_dim: 3,
            mlp_hidden: vec![crate::networks::MLP_DEFAULT_HIDDEN],
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            mc_trials: DEFAULT_MC_TRIALS,
            seed_base: 0,
            eval_fraction: DEFAULT_EVAL_FRACTION,
            data_root: PathBuf::from("data"),
        }
    }
}

fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<N, String>
where
    N::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| format!("{key}: cannot parse {v:?}: {e}"))
}

fn parse_list<N: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<Vec<N>, String>
where
    N::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

/// Splits a config value on `;` and expands `all`.
pub fn parse_config_list(v: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for name in v.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        if name.eq_ignore_ascii_case("all") {
            out.extend(ABLATION_CONFIGS.iter().map(|(n, _)| n.to_string()));
        } else {
            out.push(lookup_config(name)?.0.to_string());
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no ablation config given".into()));
    }
    Ok(out)
}

impl ExperimentPlan {
    pub fn parse(text: &str) -> Result<Self> {
        let mut plan = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Plan {
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim().to_ascii_lowercase();
            if !seen.insert(key.clone()) {
                return Err(Error::Plan {
                    line: i + 1,
                    msg: format!("duplicate key {key}"),
                });
            }
            plan.set(&key, value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Plan { line: i + 1, msg },
                other => Error::Plan {
                    line: i + 1,
                    msg: other.to_string(),
                },
            })?;
        }
        plan.validate()?;
        Ok(plan)
    }

    /// Applies one setting, as from a plan line or a command-line override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let r: std::result::Result<(), String> = (|| {
            match key {
                "config" | "configs" => {
                    self.configs = parse_config_list(value).map_err(|e| e.to_string())?;
                }
                "source" | "source.dataset" => self.source.dataset = DatasetKind::parse(value),
                "target" | "target.dataset" => self.target.dataset = DatasetKind::parse(value),
                "source.classes" => self.source.classes = parse_list(key, value)?,
                "target.classes" => self.target.classes = parse_list(key, value)?,
                "source.n_max" => self.source.n_max = Some(parse_num(key, value)?),
                "target.n_max" => self.target.n_max = Some(parse_num(key, value)?),
                "toy.n_per_class" => self.toy.n_per_class = parse_num(key, value)?,
                "toy.std" => self.toy.std = parse_num(key, value)?,
                "latent_dim" => self.latent_dim = parse_num(key, value)?,
                "mlp.hidden" => self.mlp_hidden = parse_list(key, value)?,
                "epochs" => self.epochs = parse_num(key, value)?,
                "batch_size" => self.batch_size = parse_num(key, value)?,
                "learning_rate" => self.learning_rate = parse_num(key, value)?,
                "mc_trials" => self.mc_trials = parse_num(key, value)?,
                "seed" | "seed_base" => self.seed_base = parse_num(key, value)?,
                "eval_fraction" => self.eval_fraction = parse_num(key, value)?,
                "data_root" => self.data_root = PathBuf::from(value),
                _ => return Err(format!("unknown key {key:?}")),
            }
            Ok(())
        })();
        r.map_err(Error::Config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.mc_trials == 0 {
            return bad("mc_trials must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad(format!(
                "eval_fraction must lie in (0, 1), got {}",
                self.eval_fraction
            ));
        }
        if self.latent_dim == 0 || self.mlp_hidden.contains(&0) {
            return bad("layer widths must be at least 1".into());
        }
        let toy = |d: &DomainSpec| d.dataset == DatasetKind::Toy;
        if toy(&self.source) != toy(&self.target) {
            return bad(
                "the toy dataset supplies both domains; set source and target to toy together"
                    .into(),
            );
        }
        if toy(&self.source) {
            self.toy.validate()?;
        }
        for name in &self.configs {
            lookup_config(name)?;
        }
        Ok(())
    }

    pub fn is_toy(&self) -> bool {
        self.source.dataset == DatasetKind::Toy
    }
}
