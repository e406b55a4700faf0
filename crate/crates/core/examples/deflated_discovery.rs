//! Cross-check of the enumerated states: the same seeds, but each Newton
//! solve is deflated away from the states found before it.
//!
//! Run: `cargo run --release --example deflated_discovery`

use defpinn::oracle::{find_all, Discovery, OracleConfig};
use defpinn::LdGParams;

fn main() -> defpinn::Result<()> {
    let ldg = LdGParams::default();
    let base = OracleConfig {
        grid_size: 33,
        ..OracleConfig::default()
    };
    let plain = find_all(&base, &ldg)?;
    let deflated = find_all(
        &OracleConfig {
            discovery: Discovery::DeflatedNewton,
            ..base
        },
        &ldg,
    )?;
    for (a, b) in plain.members.iter().zip(&deflated.members) {
        println!(
            "{}: energy {:.6} vs {:.6}, distance {:.2e}",
            a.label,
            a.energy,
            b.energy,
            a.field.l2_distance(&b.field)
        );
    }
    Ok(())
}
