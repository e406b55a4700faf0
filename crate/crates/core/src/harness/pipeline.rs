//! End-to-end run: train (with seed retries) → oracle → classify → export.
//!
//! Output directory layout:
//!
//! ```text
//! out/
//!   config.json            resolved configuration
//!   report.json            aggregated report (attempts, training, oracle, classification)
//!   history.csv            loss history of the selected training attempt
//!   checkpoint.json        parameters of the selected attempt
//!   train-seed-<s>/        one run directory per training attempt
//!   oracle/                <label>.csv, <label>.svg, summary.json
//!   trained/               solution-<k>.csv, solution-<k>.svg
//!   timing.json            wall-clock seconds per stage
//! ```
//!
//! Everything except `timing.json` (and the per-attempt timing files) is
//! reproduced bytewise by a rerun with the same configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::classify::{classify, sample_all, ClassificationReport};
use super::config::RunConfig;
use super::export::{export_csv, export_svg_director, import_csv};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::losses::{total_loss, CollocationGrid};
use crate::model::{init_params, ModelParams};
use crate::oracle::{find_all, Member, SolutionSet, SolutionSummary};
use crate::training::{train, HistoryRow, TrainReport};

/// Node stride of the exported director plots.
pub const SVG_STRIDE: usize = 4;

#[derive(Clone, Debug, Default)]
pub struct PipelineOptions {
    /// Reuse an existing checkpoint instead of training.
    pub skip_train: bool,
}

/// Training-side acceptance measures of one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingCheck {
    /// Epoch-1 PIML loss divided by the final one, per solution.
    pub piml_reduction: Vec<f64>,
    pub final_deflation: f64,
    /// Smallest pairwise deflation distance at the final parameters.
    pub min_distance: f64,
    /// Deflation stayed exactly 0 over the tail window (`None` without history).
    pub deflation_tail_zero: Option<bool>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub seed: u64,
    /// Run directory, relative to the pipeline output directory.
    pub dir: PathBuf,
    pub check: TrainingCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub training: bool,
    pub classification: bool,
    pub energy: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: RunConfig,
    pub attempts: Vec<Attempt>,
    /// Seed of the parameters that were classified.
    pub selected_seed: u64,
    pub checkpoint: PathBuf,
    pub training: TrainingCheck,
    pub train: Option<TrainReport>,
    pub oracle: SolutionSummary,
    pub classification: ClassificationReport,
    pub acceptance: AcceptanceSummary,
}

/// Acceptance measures for `params`; `history` adds the tail-window check.
pub fn check_training(
    run: &RunConfig,
    params: &ModelParams,
    history: Option<&[HistoryRow]>,
) -> Result<TrainingCheck> {
    let trap = run.ldg.trapezoid()?;
    let grid = CollocationGrid::build(&run.grid, trap, run.loss.hard_constraint())?;
    let initial = match history.and_then(|h| h.first()) {
        Some(row) => row.piml.clone(),
        None => total_loss(&init_params(&run.model), &grid, &run.ldg, &run.loss).piml_per_solution,
    };
    let fin = total_loss(params, &grid, &run.ldg, &run.loss);
    let piml_reduction: Vec<f64> = initial
        .iter()
        .zip(&fin.piml_per_solution)
        .map(|(a, b)| a / b)
        .collect();
    let table = crate::losses::evaluate_fields(params, &grid.points, &grid.bc);
    let dist = crate::losses::distance_matrix(&table, &grid.weights, run.loss.deflation_norm);
    let k = dist.len();
    let min_distance = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .map(|(i, j)| dist[i][j])
        .fold(f64::INFINITY, f64::min);
    let deflation_tail_zero = history.map(|h| {
        let tail = run.acceptance.deflation_tail_epochs.min(h.len());
        h[h.len() - tail..].iter().all(|r| r.deflation == 0.0)
    });
    let passed = fin.deflation == 0.0
        && deflation_tail_zero.unwrap_or(true)
        && piml_reduction
            .iter()
            .all(|&r| r >= run.acceptance.piml_reduction);
    Ok(TrainingCheck {
        piml_reduction,
        final_deflation: fin.deflation,
        min_distance,
        deflation_tail_zero,
        passed,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `<label>.csv`, `<label>.svg` and `summary.json` into `dir`.
pub fn write_solution_set(set: &SolutionSet, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for m in &set.members {
        export_csv(&m.field, &dir.join(format!("{}.csv", m.label)))?;
        export_svg_director(&m.field, &dir.join(format!("{}.svg", m.label)), SVG_STRIDE)?;
    }
    write(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&set.summary())?,
    )
}

/// Reads a directory written by [`write_solution_set`].
pub fn read_solution_set(dir: &Path) -> Result<SolutionSet> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary: SolutionSummary = serde_json::from_str(&text)?;
    let members = summary
        .labels
        .iter()
        .enumerate()
        .map(|(n, &label)| {
            Ok(Member {
                label,
                field: import_csv(&dir.join(format!("{label}.csv")))?,
                energy: summary.energies[n],
                residual_inf: summary.residual_inf[n],
                seeds: summary.seeds[n].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SolutionSet {
        members,
        distances: summary.distances,
    })
}

/// Samples every solution of `params` on the `m × m` lattice and writes
/// `solution-<k>.csv` and `.svg` into `dir` (k counted from 1).
pub fn export_model(run: &RunConfig, params: &ModelParams, m: usize, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let fields = sample_all(params, m, run.ldg.trapezoid()?)?;
    for (k, q) in fields.iter().enumerate() {
        export_csv(q, &dir.join(format!("solution-{}.csv", k + 1)))?;
        export_svg_director(q, &dir.join(format!("solution-{}.svg", k + 1)), SVG_STRIDE)?;
    }
    Ok(())
}

struct Trained {
    params: ModelParams,
    report: Option<TrainReport>,
    check: TrainingCheck,
    seed: u64,
    checkpoint: PathBuf,
    attempts: Vec<Attempt>,
}

fn train_with_retries(run: &RunConfig, out: &Path) -> Result<Trained> {
    let mut attempts = Vec::new();
    let mut best: Option<(ModelParams, TrainReport, TrainingCheck, u64, PathBuf)> = None;
    for n in 0..run.acceptance.max_attempts {
        let seed = run.seed + n as u64;
        let attempt_run = run.with_seed(seed);
        let dir = out.join(format!("train-seed-{seed}"));
        info!("training attempt {} with seed {seed}", n + 1);
        let (params, report) = train(&attempt_run, Some(&dir))?;
        let check = check_training(&attempt_run, &params, Some(&report.history))?;
        info!(
            "seed {seed}: deflation {} min PIML reduction {:.3e}",
            check.final_deflation,
            check
                .piml_reduction
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        );
        attempts.push(Attempt {
            seed,
            dir: PathBuf::from(format!("train-seed-{seed}")),
            check: check.clone(),
        });
        let passed = check.passed;
        // Keep the passing attempt, else the one with the best worst-case reduction.
        let better = match &best {
            None => true,
            Some((_, _, b, _, _)) => {
                let worst = |c: &TrainingCheck| {
                    c.piml_reduction
                        .iter()
                        .cloned()
                        .fold(f64::INFINITY, f64::min)
                };
                passed || (!b.passed && worst(&check) > worst(b))
            }
        };
        if better {
            best = Some((params, report, check, seed, dir));
        }
        if passed {
            break;
        }
    }
    let (params, report, check, seed, dir) = best.expect("max_attempts ≥ 1");
    for file in ["history.csv", "checkpoint.json"] {
        fs::copy(dir.join(file), out.join(file)).map_err(|e| Error::io(dir.join(file), e))?;
    }
    Ok(Trained {
        params,
        report: Some(report),
        check,
        seed,
        checkpoint: PathBuf::from("checkpoint.json"),
        attempts,
    })
}

fn load_trained(run: &RunConfig, out: &Path) -> Result<Trained> {
    let path = run
        .output
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join("checkpoint.json"));
    if !path.exists() {
        return Err(Error::Config(format!(
            "--skip-train needs a checkpoint, none at {}",
            path.display()
        )));
    }
    let (model, params) = checkpoint::load(&path)?;
    let mut run = run.clone();
    run.model = model;
    run.seed = run.model.init_seed;
    let check = check_training(&run, &params, None)?;
    Ok(Trained {
        params,
        report: None,
        check,
        seed: run.seed,
        checkpoint: path,
        attempts: Vec::new(),
    })
}

pub fn run_pipeline(run: &RunConfig, out: &Path, opts: &PipelineOptions) -> Result<PipelineReport> {
    let mut run = run.clone();
    run.resolve()?;
    create_dir(out)?;
    write(&out.join("config.json"), &run.to_json_pretty()?)?;
    let mut timing = serde_json::Map::new();

    let clock = Instant::now();
    let trained = if opts.skip_train {
        load_trained(&run, out)
    } else {
        train_with_retries(&run, out)
    }
    .map_err(|e| e.in_stage("train"))?;
    timing.insert("train".into(), clock.elapsed().as_secs_f64().into());

    let clock = Instant::now();
    let oracle = find_all(&run.oracle, &run.ldg).map_err(|e| e.in_stage("oracle"))?;
    write_solution_set(&oracle, &out.join("oracle")).map_err(|e| e.in_stage("oracle"))?;
    timing.insert("oracle".into(), clock.elapsed().as_secs_f64().into());

    let clock = Instant::now();
    let trap = run.ldg.trapezoid()?;
    let m = run.oracle.grid_size;
    let fields = sample_all(&trained.params, m, trap).map_err(|e| e.in_stage("classify"))?;
    let classification = classify(
        &fields,
        &oracle,
        &run.ldg,
        run.acceptance.classification_tol,
        run.acceptance.energy_rel_tol,
    )
    .map_err(|e| e.in_stage("classify"))?;
    export_model(&run, &trained.params, m, &out.join("trained"))
        .map_err(|e| e.in_stage("export"))?;
    timing.insert(
        "classify_export".into(),
        clock.elapsed().as_secs_f64().into(),
    );

    let acceptance = AcceptanceSummary {
        training: trained.check.passed,
        classification: classification.classification_passed,
        energy: classification.energy_passed,
        passed: trained.check.passed
            && classification.classification_passed
            && classification.energy_passed,
    };
    let report = PipelineReport {
        config: run,
        attempts: trained.attempts,
        selected_seed: trained.seed,
        checkpoint: trained.checkpoint,
        training: trained.check,
        train: trained.report,
        oracle: oracle.summary(),
        classification,
        acceptance,
    };
    write(
        &out.join("report.json"),
        &serde_json::to_string_pretty(&report)?,
    )
    .map_err(|e| e.in_stage("export"))?;
    write(
        &out.join("timing.json"),
        &serde_json::to_string_pretty(&serde_json::Value::Object(timing))?,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Label;

    fn tiny() -> RunConfig {
        RunConfig::from_json_str(
            r#"{"seed": 3, "model": {"hidden_width": 8, "feature_count": 3},
                "grid": {"size": 5}, "optimizer": {"epochs": 4},
                "oracle": {"grid_size": 17}, "acceptance": {"max_attempts": 2},
                "log_every": 0}"#,
        )
        .unwrap()
    }

    fn read(path: &Path) -> Vec<u8> {
        fs::read(path).unwrap()
    }

    #[test]
    fn pipeline_runs_end_to_end_and_reproduces() {
        let run = tiny();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let report = run_pipeline(&run, a.path(), &PipelineOptions::default()).unwrap();
        // Four epochs cannot meet the reduction threshold, so both seeds run.
        assert_eq!(report.attempts.len(), 2);
        assert_eq!(report.attempts[1].seed, 4);
        assert!(!report.acceptance.passed);
        assert_eq!(report.oracle.labels, Label::ALL.to_vec());
        let mut assigned = report.classification.assignment.clone();
        assigned.sort();
        assert_eq!(assigned, Label::ALL.to_vec());
        for f in [
            "config.json",
            "report.json",
            "history.csv",
            "checkpoint.json",
            "timing.json",
            "train-seed-3/history.csv",
            "train-seed-4/report.json",
            "oracle/summary.json",
            "oracle/D1.csv",
            "oracle/R4.svg",
            "trained/solution-1.csv",
            "trained/solution-6.svg",
        ] {
            assert!(a.path().join(f).exists(), "{f}");
        }

        run_pipeline(&run, b.path(), &PipelineOptions::default()).unwrap();
        for f in [
            "report.json",
            "history.csv",
            "oracle/D2.csv",
            "trained/solution-3.csv",
        ] {
            assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
        }

        let oracle = read_solution_set(&a.path().join("oracle")).unwrap();
        assert_eq!(oracle.summary(), report.oracle);

        // Reusing the checkpoint gives the same classification.
        let skipped = run_pipeline(&run, a.path(), &PipelineOptions { skip_train: true }).unwrap();
        assert!(skipped.attempts.is_empty());
        assert_eq!(skipped.classification, report.classification);
        assert_eq!(
            skipped.training.piml_reduction,
            report.training.piml_reduction
        );
    }

    #[test]
    fn skip_train_without_checkpoint_fails() {
        let dir = tempfile::tempdir().unwrap();
        let err =
            run_pipeline(&tiny(), dir.path(), &PipelineOptions { skip_train: true }).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "train", .. }), "{err}");
    }
}
