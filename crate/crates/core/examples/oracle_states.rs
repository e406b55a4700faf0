//! The finite-difference reference solver: sixteen corner-jump seeds relax
//! into the six stable states, which are written as CSV and SVG.
//!
//! Run: `cargo run --release --example oracle_states -- [grid_size] [out_dir]`

use std::path::PathBuf;

use defpinn::harness::pipeline::write_solution_set;
use defpinn::oracle::{find_all, OracleConfig};
use defpinn::LdGParams;

fn main() -> defpinn::Result<()> {
    let mut args = std::env::args().skip(1);
    let grid_size = args.next().and_then(|a| a.parse().ok()).unwrap_or(33);
    let out = args.next().map(PathBuf::from);
    let config = OracleConfig {
        grid_size,
        ..OracleConfig::default()
    };
    let set = find_all(&config, &LdGParams::default())?;
    for m in &set.members {
        println!(
            "{}  energy {:9.4}  residual {:.1e}  seeds {}",
            m.label,
            m.energy,
            m.residual_inf,
            m.seeds.join(" ")
        );
    }
    println!("reflection symmetry defect {:.1e}", set.symmetry_defect());
    if let Some(dir) = out {
        write_solution_set(&set, &dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
