//! `defpinn` command line. Log verbosity follows `RUST_LOG` (default `info`).
//!
//! Exit status: 0 on success, 1 when a check or acceptance threshold fails,
//! 2 on errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use defpinn::checkpoint;
use defpinn::harness::classify::{classify, sample_all};
use defpinn::harness::config::load_config;
use defpinn::harness::pipeline::{
    export_model, read_solution_set, run_pipeline, write_solution_set, PipelineOptions,
};
use defpinn::oracle::find_all;
use defpinn::training::{gradcheck_suite, train};
use defpinn::{Error, ModelParams, Result, RunConfig};

#[derive(Parser)]
#[command(
    name = "defpinn",
    version,
    about = "Deflation PINN for the reduced Landau-de Gennes problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration. Without it the desk profile defaults apply.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Falls back to `output.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the K-solution network and write history, checkpoint and report.
    Train(Common),
    /// Find the six reference states with the finite-difference solver.
    Oracle(Common),
    /// Match a trained checkpoint against the reference states.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to classify (default: `output.checkpoint`, then `<out>/checkpoint.json`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory written by `oracle`; solved afresh when absent.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
    /// Sample a checkpoint on the lattice and write CSV fields and SVG plots.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Lattice size (default: `oracle.grid_size`).
        #[arg(long)]
        grid_size: Option<usize>,
    },
    /// Compare analytic parameter gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Train, solve, classify and export, then apply the acceptance thresholds.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Reuse an existing checkpoint instead of training.
        #[arg(long)]
        skip_train: bool,
    },
}

struct Context {
    run: RunConfig,
    out: PathBuf,
}

impl Common {
    fn context(&self) -> Result<Context> {
        let run = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::from_json_str("")?,
        };
        let out = self
            .out
            .clone()
            .or_else(|| run.output.dir.clone())
            .ok_or_else(|| {
                Error::Config("no output directory: pass --out or set output.dir".into())
            })?;
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Context { run, out })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write(path, &serde_json::to_string_pretty(value)?)
}

fn load_params(ctx: &Context, flag: Option<PathBuf>) -> Result<ModelParams> {
    let path = flag
        .or_else(|| ctx.run.output.checkpoint.clone())
        .unwrap_or_else(|| ctx.out.join("checkpoint.json"));
    info!("loading checkpoint {}", path.display());
    let (model, params) = checkpoint::load(&path)?;
    if model.solution_count != ctx.run.model.solution_count {
        warn!(
            "checkpoint has {} solutions, config {}",
            model.solution_count, ctx.run.model.solution_count
        );
    }
    Ok(params)
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train(common) => {
            let ctx = common.context()?;
            let (_, report) = train(&ctx.run, Some(&ctx.out))?;
            println!(
                "trained {} epochs: total {:.6e}, deflation {:.3e}, min distance {:.4}",
                report.epochs_run,
                report.final_total,
                report.final_deflation,
                report.min_distance()
            );
            Ok(true)
        }
        Command::Oracle(common) => {
            let ctx = common.context()?;
            write(&ctx.out.join("config.json"), &ctx.run.to_json_pretty()?)?;
            let set = find_all(&ctx.run.oracle, &ctx.run.ldg)?;
            write_solution_set(&set, &ctx.out)?;
            for m in &set.members {
                println!(
                    "{}: energy {:.6} residual {:.2e}",
                    m.label, m.energy, m.residual_inf
                );
            }
            Ok(true)
        }
        Command::Classify {
            common,
            checkpoint,
            oracle,
        } => {
            let ctx = common.context()?;
            write(&ctx.out.join("config.json"), &ctx.run.to_json_pretty()?)?;
            let params = load_params(&ctx, checkpoint)?;
            let set = match oracle {
                Some(dir) => read_solution_set(&dir)?,
                None => {
                    let set = find_all(&ctx.run.oracle, &ctx.run.ldg)?;
                    write_solution_set(&set, &ctx.out.join("oracle"))?;
                    set
                }
            };
            let m = set.members[0].field.m;
            let fields = sample_all(&params, m, ctx.run.ldg.trapezoid()?)?;
            let acc = &ctx.run.acceptance;
            let report = classify(
                &fields,
                &set,
                &ctx.run.ldg,
                acc.classification_tol,
                acc.energy_rel_tol,
            )?;
            write_json(&ctx.out.join("classification.json"), &report)?;
            for (k, label) in report.assignment.iter().enumerate() {
                println!(
                    "solution {} -> {label}: relative error {:.4}, energy {:.4} vs {:.4}",
                    k + 1,
                    report.relative_errors[k],
                    report.trained_energies[k],
                    report.oracle_energies[k]
                );
            }
            Ok(report.classification_passed && report.energy_passed)
        }
        Command::Export {
            common,
            checkpoint,
            grid_size,
        } => {
            let ctx = common.context()?;
            let params = load_params(&ctx, checkpoint)?;
            let m = grid_size.unwrap_or(ctx.run.oracle.grid_size);
            export_model(&ctx.run, &params, m, &ctx.out)?;
            println!(
                "wrote {} solutions on a {m}×{m} lattice",
                params.solutions()
            );
            Ok(true)
        }
        Command::Gradcheck { common, trials } => {
            let ctx = common.context()?;
            write(&ctx.out.join("config.json"), &ctx.run.to_json_pretty()?)?;
            let report = gradcheck_suite(&ctx.run, trials)?;
            write_json(&ctx.out.join("gradcheck.json"), &report)?;
            for m in &report.modes {
                println!(
                    "{:<15} {:.3e} < {:e}: {}",
                    m.name,
                    m.max_rel_error,
                    m.tolerance,
                    if m.passed { "ok" } else { "FAILED" }
                );
            }
            Ok(report.passed)
        }
        Command::Pipeline { common, skip_train } => {
            let ctx = common.context()?;
            let report = run_pipeline(&ctx.run, &ctx.out, &PipelineOptions { skip_train })?;
            let a = &report.acceptance;
            println!(
                "training {} classification {} energy {}",
                a.training, a.classification, a.energy
            );
            Ok(a.passed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            error!("check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
