//! Configuration layering: a JSON override over the `desk` or `paper`
//! profile, with validation.
//!
//! Run: `cargo run --example config_profiles`

use defpinn::RunConfig;

fn main() -> defpinn::Result<()> {
    let desk = RunConfig::from_json_str("")?;
    let paper = RunConfig::from_json_str(r#"{"profile": "paper"}"#)?;
    println!(
        "desk  H = {}, epochs = {}",
        desk.model.hidden_width, desk.optimizer.epochs
    );
    println!(
        "paper H = {}, epochs = {}",
        paper.model.hidden_width, paper.optimizer.epochs
    );

    let custom = RunConfig::from_json_str(
        r#"{"seed": 7, "optimizer": {"schedule": {"kind": "exponential", "gamma": 0.9995}}}"#,
    )?;
    println!("{}", custom.to_json_pretty()?);

    for bad in [r#"{"loss": {"d_min": -1}}"#, r#"{"model": {"width": 3}}"#] {
        println!("{bad} -> {}", RunConfig::from_json_str(bad).unwrap_err());
    }
    Ok(())
}
