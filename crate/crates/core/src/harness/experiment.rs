use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::mean_std;
use super::plan::ExperimentPlan;
use super::train::{evaluate, load_raw, train, EpochLog, RawData};
use crate::alignment::Domain;
use crate::error::{Error, Result};
use crate::networks::save_checkpoint;
use crate::objective::lookup_config;

#[derive(Clone, Debug, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub source_accuracy: f64,
    /// Flip-corrected for two-class problems.
    pub target_accuracy: f64,
    pub target_raw_accuracy: f64,
    pub source_confusion: Vec<Vec<usize>>,
    pub target_confusion: Vec<Vec<usize>>,
    pub history: Vec<EpochLog>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub config: String,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Sorted by trial index.
    pub trials: Vec<TrialResult>,
    pub src_mean: f64,
    /// Population standard deviation over trials.
    pub src_std: f64,
    pub tgt_mean: f64,
    pub tgt_std: f64,
}

impl RunResult {
    fn aggregate(plan: &ExperimentPlan, config: &str, trials: Vec<TrialResult>) -> Self {
        let (src_mean, src_std) =
            mean_std(&trials.iter().map(|t| t.source_accuracy).collect::<Vec<_>>());
        let (tgt_mean, tgt_std) =
            mean_std(&trials.iter().map(|t| t.target_accuracy).collect::<Vec<_>>());
        Self {
            config: config.to_string(),
            latent_dim: plan.latent_dim,
            epochs: plan.epochs,
            batch_size: plan.batch_size,
            learning_rate: plan.learning_rate,
            trials,
            src_mean,
            src_std,
            tgt_mean,
            tgt_std,
        }
    }
}

/// File-system friendly form of a config name.
pub fn config_slug(name: &str) -> String {
    let mut s = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            s.push(c.to_ascii_lowercase());
        } else if !s.ends_with('_') {
            s.push('_');
        }
    }
    s.trim_matches('_').to_string()
}

/// Runs every trial of one config; trials execute in parallel with seeds
/// `seed_base + i`. Checkpoints go to `<out>/checkpoints/<config>/` when an
/// output directory is given.
pub fn run_config(
    plan: &ExperimentPlan,
    raw: &RawData,
    config: &str,
    out: Option<&Path>,
) -> Result<RunResult> {
    let (name, weights) = lookup_config(config)?;
    let ckpt_dir = out.map(|o| o.join("checkpoints").join(config_slug(name)));
    if let Some(dir) = &ckpt_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let trials: Vec<TrialResult> = (0..plan.mc_trials)
        .into_par_iter()
        .map(|trial| -> Result<TrialResult> {
            let seed = plan.seed_base.wrapping_add(trial as u64);
            let (data, bundle, history) = train(plan, raw, &weights, trial, seed)?;
            if let Some(dir) = &ckpt_dir {
                save_checkpoint(&bundle.store, &dir.join(format!("trial_{trial}.bin")))?;
            }
            let src = evaluate(&bundle, Domain::Source, &data.src_eval)?;
            let tgt = evaluate(&bundle, Domain::Target, &data.tgt_eval)?;
            Ok(TrialResult {
                trial,
                seed,
                source_accuracy: src.accuracy,
                target_accuracy: tgt.corrected,
                target_raw_accuracy: tgt.accuracy,
                source_confusion: src.confusion,
                target_confusion: tgt.confusion,
                history,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RunResult::aggregate(plan, name, trials))
}

/// Runs each config of the plan in order.
pub fn run_experiment(plan: &ExperimentPlan, out: Option<&Path>) -> Result<Vec<RunResult>> {
    plan.validate()?;
    let raw = load_raw(plan)?;
    plan.configs
        .iter()
        .map(|c| run_config(plan, &raw, c, out))
        .collect()
}
