use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use defpinn::harness::pipeline::PipelineReport;
use defpinn::oracle::Label;

const TINY: &str = r#"{"seed": 2, "model": {"hidden_width": 8, "feature_count": 3},
    "grid": {"size": 5}, "optimizer": {"epochs": 3},
    "oracle": {"grid_size": 17}, "acceptance": {"max_attempts": 1},
    "log_every": 0}"#;

fn defpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defpinn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn subcommands_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, TINY).unwrap();
    let cfg = path(&config);
    let run = dir.path().join("train");

    let out = defpinn(&["train", "--config", cfg, "--out", path(&run)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "config.json",
        "history.csv",
        "checkpoint.json",
        "report.json",
        "timing.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);

    let oracle = dir.path().join("oracle");
    let out = defpinn(&["oracle", "--config", cfg, "--out", path(&oracle)]);
    assert!(out.status.success());
    for label in Label::ALL {
        let csv = fs::read_to_string(oracle.join(format!("{label}.csv"))).unwrap();
        assert!(csv.starts_with("x,y,q11,q12\n"));
        assert_eq!(csv.lines().count(), 17 * 17 + 1);
    }
    assert!(oracle.join("summary.json").exists());

    // Three epochs cannot match the states, so classify reports failure.
    let classified = dir.path().join("classify");
    let checkpoint = run.join("checkpoint.json");
    let out = defpinn(&[
        "classify",
        "--config",
        cfg,
        "--out",
        path(&classified),
        "--checkpoint",
        path(&checkpoint),
        "--oracle",
        path(&oracle),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(classified.join("classification.json").exists());
    assert!(!classified.join("oracle").exists());

    let exported = dir.path().join("export");
    let out = defpinn(&[
        "export",
        "--config",
        cfg,
        "--out",
        path(&exported),
        "--checkpoint",
        path(&checkpoint),
        "--grid-size",
        "9",
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(exported.join("solution-6.csv")).unwrap();
    assert_eq!(csv.lines().count(), 82);
    assert!(exported.join("solution-1.svg").exists());
}

#[test]
fn gradcheck_passes_on_a_clamped_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = defpinn(&["gradcheck", "--out", path(dir.path()), "--trials", "1"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gradcheck.json")).unwrap())
            .unwrap();
    assert_eq!(report["hidden_width"], 16);
    assert_eq!(report["passed"], true);
}

#[test]
fn pipeline_fails_acceptance_and_reuses_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, TINY).unwrap();
    let out_dir = dir.path().join("pipe");
    let args = [
        "pipeline",
        "--config",
        path(&config),
        "--out",
        path(&out_dir),
    ];

    let out = defpinn(&args);
    assert_eq!(out.status.code(), Some(1));
    let report: PipelineReport =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.attempts.len(), 1);
    assert!(!report.acceptance.passed);

    let mut skip = args.to_vec();
    skip.push("--skip-train");
    let out = defpinn(&skip);
    assert_eq!(out.status.code(), Some(1));
    let again: PipelineReport =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(again.attempts.is_empty());
    assert_eq!(again.classification, report.classification);
}

#[test]
fn errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = defpinn(&["pipeline", "--out", path(dir.path()), "--skip-train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"loss": {"d_min": -1}}"#).unwrap();
    let out = defpinn(&["train", "--config", path(&bad), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_min"));

    // No --out and no output.dir.
    let tiny = dir.path().join("tiny.json");
    fs::write(&tiny, TINY).unwrap();
    let out = defpinn(&["train", "--config", path(&tiny)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}
