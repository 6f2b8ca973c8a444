use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use dsalign_core::data::{
    convert_usps, generate_direct_sum_toy, serialize_idx, write_idx_dataset, IdxType, SynthSpec,
};
use dsalign_core::harness::{emit_results, run_experiment, write_outputs, ExperimentPlan, Format};
use dsalign_core::verify;
use dsalign_core::Error;

#[derive(Parser)]
#[command(
    name = "dsalign",
    version,
    about = "Heterogeneous domain adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every config of a plan file.
    Run {
        plan: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        latent_dim: Option<usize>,
        /// Config name(s), `;`-separated, or `all`.
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        data_root: Option<PathBuf>,
    },
    /// Run the gradient-oracle and invariant suites.
    Check,
    /// Write the toy datasets as IDX files.
    GenToy {
        spec: PathBuf,
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// Convert the USPS text distribution to 28x28 IDX files.
    ConvertUsps { input: PathBuf, output: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let aborted = e
                .downcast_ref::<Error>()
                .is_some_and(Error::is_training_abort);
            ExitCode::from(if aborted { 2 } else { 1 })
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Run {
            plan,
            seed,
            out_dir,
            latent_dim,
            config,
            epochs,
            trials,
            data_root,
        } => {
            let text =
                fs::read_to_string(&plan).with_context(|| format!("reading {}", plan.display()))?;
            let mut p = ExperimentPlan::parse(&text)?;
            let overrides = [
                ("seed", seed.map(|v| v.to_string())),
                ("latent_dim", latent_dim.map(|v| v.to_string())),
                ("config", config),
                ("epochs", epochs.map(|v| v.to_string())),
                ("mc_trials", trials.map(|v| v.to_string())),
                ("data_root", data_root.map(|v| v.display().to_string())),
            ];
            for (key, value) in overrides {
                if let Some(v) = value {
                    p.set(key, &v)
                        .map_err(|e| anyhow::anyhow!("--{}: {e}", key.replace('_', "-")))?;
                }
            }
            p.validate()?;
            let results = run_experiment(&p, Some(&out_dir))?;
            write_outputs(&out_dir, &results)?;
            print!("{}", emit_results(&results, Format::Table)?);
            println!("wrote {}", out_dir.join("results.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check => {
            let outcomes = verify::run_all();
            let mut failed = 0;
            for o in &outcomes {
                println!(
                    "{} {:<40} {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.detail
                );
                failed += usize::from(!o.passed);
            }
            println!("{} checks, {failed} failed", outcomes.len());
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::GenToy { spec, out_dir } => {
            let text =
                fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let s = SynthSpec::parse(&text)?;
            let (src, tgt) = generate_direct_sum_toy(&s)?;
            write_idx_dataset(&out_dir.join("toy_source"), &src, IdxType::F32)?;
            write_idx_dataset(&out_dir.join("toy_target"), &tgt, IdxType::F32)?;
            println!(
                "wrote {} and {}",
                out_dir.join("toy_source").display(),
                out_dir.join("toy_target").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::ConvertUsps { input, output } => {
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let (images, labels) = convert_usps(&text)?;
            fs::create_dir_all(&output)
                .with_context(|| format!("creating {}", output.display()))?;
            write(
                &output.join(dsalign_core::data::TRAIN_IMAGES),
                &serialize_idx(&images)?,
            )?;
            write(
                &output.join(dsalign_core::data::TRAIN_LABELS),
                &serialize_idx(&labels)?,
            )?;
            println!(
                "converted {} images into {}",
                labels.dims[0],
                output.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
