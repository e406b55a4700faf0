//! The whole chain on a deliberately tiny configuration: train, solve for
//! the reference states, classify, export, and apply the thresholds.
//!
//! Run: `RUST_LOG=info cargo run --release --example pipeline -- [out_dir]`

use std::path::PathBuf;

use defpinn::harness::pipeline::{run_pipeline, PipelineOptions};
use defpinn::RunConfig;

fn main() -> defpinn::Result<()> {
    env_logger::init();
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("defpinn-pipeline"));
    let run = RunConfig::from_json_str(
        r#"{"model": {"hidden_width": 32, "feature_count": 8},
            "grid": {"size": 17}, "optimizer": {"epochs": 200},
            "oracle": {"grid_size": 33}, "acceptance": {"max_attempts": 1},
            "log_every": 50}"#,
    )?;
    let report = run_pipeline(&run, &out, &PipelineOptions::default())?;
    println!("oracle labels {:?}", report.oracle.labels);
    println!("assignment    {:?}", report.classification.assignment);
    println!("acceptance    {:?}", report.acceptance);
    println!("artifacts in {}", out.display());
    Ok(())
}
