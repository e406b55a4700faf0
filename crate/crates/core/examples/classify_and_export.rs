//! Samples a model on the reference lattice, matches its solutions to the
//! six reference states and writes the fields as CSV and SVG.
//!
//! Run: `cargo run --release --example classify_and_export -- [checkpoint.json] [out_dir]`
//!
//! Without a checkpoint an untrained narrow model is used, which shows the
//! plumbing but matches the states poorly.

use std::path::PathBuf;

use defpinn::checkpoint;
use defpinn::harness::classify::{classify, sample_all};
use defpinn::harness::pipeline::export_model;
use defpinn::model::init_params;
use defpinn::oracle::find_all;
use defpinn::RunConfig;

fn main() -> defpinn::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut run = RunConfig::from_json_str(r#"{"oracle": {"grid_size": 33}}"#)?;
    let params = match args.next() {
        Some(path) => checkpoint::load(path.as_ref())?.1,
        None => {
            run.model.hidden_width = 32;
            init_params(&run.model)
        }
    };
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("defpinn-export"));

    let trap = run.ldg.trapezoid()?;
    let oracle = find_all(&run.oracle, &run.ldg)?;
    let fields = sample_all(&params, run.oracle.grid_size, trap)?;
    let report = classify(&fields, &oracle, &run.ldg, 0.15, 0.10)?;
    for (k, label) in report.assignment.iter().enumerate() {
        println!(
            "solution {} -> {label}  relative L2 error {:.3}  energy {:.2} (reference {:.2})",
            k + 1,
            report.relative_errors[k],
            report.trained_energies[k],
            report.oracle_energies[k]
        );
    }
    export_model(&run, &params, run.oracle.grid_size, &out)?;
    println!("fields written to {}", out.display());
    Ok(())
}
