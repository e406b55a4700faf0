//! A short training run of a narrow network with three solutions; prints the
//! loss history and how far apart the learned solutions end up.
//!
//! Run: `RUST_LOG=info cargo run --release --example train_small`

use defpinn::training::train;
use defpinn::RunConfig;

fn main() -> defpinn::Result<()> {
    env_logger::init();
    let run = RunConfig::from_json_str(
        r#"{"seed": 1,
            "model": {"hidden_width": 32, "feature_count": 8, "solution_count": 3},
            "grid": {"size": 17},
            "optimizer": {"epochs": 400},
            "log_every": 100}"#,
    )?;
    let (_, report) = train(&run, None)?;
    for row in report.history.iter().step_by(50) {
        println!(
            "epoch {:>4}  total {:.4e}  deflation {:.3e}  piml {:?}",
            row.epoch,
            row.total,
            row.deflation,
            row.piml
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
        );
    }
    println!("final deflation {:.3e}", report.final_deflation);
    println!(
        "min pairwise distance {:.4} (d_min {})",
        report.min_distance(),
        run.loss.d_min
    );
    Ok(())
}
