//! Hand-written reverse-mode gradients against finite differences, in the
//! three loss modes.
//!
//! Run: `cargo run --release --example gradient_check -- [trials]`

use defpinn::training::gradcheck_suite;
use defpinn::RunConfig;

fn main() -> defpinn::Result<()> {
    let trials = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(5);
    // The desk profile is clamped to the largest model the check accepts.
    let run = RunConfig::from_json_str("")?;
    let report = gradcheck_suite(&run, trials)?;
    println!(
        "H = {}, grid {}×{}, {} trials",
        report.hidden_width, report.grid_size, report.grid_size, report.trials
    );
    for m in &report.modes {
        println!(
            "  {:<15} max relative error {:.2e} (tolerance {:e})",
            m.name, m.max_rel_error, m.tolerance
        );
    }
    println!(
        "{}",
        if report.passed {
            "all modes pass"
        } else {
            "FAILED"
        }
    );
    Ok(())
}
