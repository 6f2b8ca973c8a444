use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::RunResult;
use crate::error::{Error, Result};

pub const OPTIMIZER_NAME: &str = "adam";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Table,
}

/// One row of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config: String,
    pub latent_dim: usize,
    pub src_mean: f64,
    pub src_std: f64,
    pub tgt_mean: f64,
    pub tgt_std: f64,
    pub trials: usize,
    pub src_table: String,
    pub tgt_table: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
}

/// `mean%±std%` with one decimal.
pub fn percent_pm(mean: f64, std: f64) -> String {
    format!("{:.1}%±{:.1}%", 100.0 * mean, 100.0 * std)
}

impl From<&RunResult> for ResultRow {
    fn from(r: &RunResult) -> Self {
        Self {
            config: r.config.clone(),
            latent_dim: r.latent_dim,
            src_mean: r.src_mean,
            src_std: r.src_std,
            tgt_mean: r.tgt_mean,
            tgt_std: r.tgt_std,
            trials: r.trials.len(),
            src_table: percent_pm(r.src_mean, r.src_std),
            tgt_table: percent_pm(r.tgt_mean, r.tgt_std),
            epochs: r.epochs,
            batch_size: r.batch_size,
            learning_rate: r.learning_rate,
            optimizer: OPTIMIZER_NAME.into(),
        }
    }
}

pub fn emit_results(results: &[RunResult], format: Format) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Contract("no results to emit".into()));
    }
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in results {
                w.serialize(ResultRow::from(r))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        Format::Table => {
            let rows: Vec<ResultRow> = results.iter().map(ResultRow::from).collect();
            let width = rows
                .iter()
                .map(|r| r.config.chars().count())
                .max()
                .unwrap_or(0)
                .max(6);
            let mut s = format!(
                "{:<width$}  {:>4}  {:>13}  {:>13}\n",
                "Config", "Dims", "Source", "Target"
            );
            for r in &rows {
                s += &format!(
                    "{:<width$}  {:>4}  {:>13}  {:>13}\n",
                    r.config, r.latent_dim, r.src_table, r.tgt_table
                );
            }
            Ok(s)
        }
    }
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Writes `results.csv` and `trials.json` (per-trial accuracies, confusion
/// matrices and loss histories) under `out`.
pub fn write_outputs(out: &Path, results: &[RunResult]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join("results.csv");
    fs::write(&csv_path, emit_results(results, Format::Csv)?)
        .map_err(|e| Error::io(&csv_path, e))?;
    let json_path = out.join("trials.json");
    let json = serde_json::to_string_pretty(results)?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}
