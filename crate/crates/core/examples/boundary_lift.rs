//! Boundary data, its radial extension into the square, and the cutoff that
//! makes every network output satisfy the Dirichlet condition exactly.
//!
//! Run: `cargo run --release --example boundary_lift`

use defpinn::geometry::{boundary_q1, cutoff_omega, extend_boundary, TrapezoidParams};
use defpinn::model::{boundary_deviation, init_params, ModelConfig};
use defpinn::Point2;

fn main() -> defpinn::Result<()> {
    let trap = TrapezoidParams::from_epsilon(0.02)?;
    println!("trapezoid ramp width d = {}", trap.d);

    println!("\nQ_b along the bottom edge:");
    for x in [0.0, 0.03, 0.06, 0.3, 0.5, 0.94, 0.97, 1.0] {
        println!(
            "  x = {x:<5} Q_b = {:+.4}",
            boundary_q1(Point2::new(x, 0.0), trap)?
        );
    }

    println!("\nlift and cutoff along the line y = 0.3:");
    for x in [0.05, 0.2, 0.35, 0.65, 0.8, 0.95] {
        let p = Point2::new(x, 0.3);
        println!(
            "  x = {x:<5} lift = {:+.4}  omega = {:.4}",
            extend_boundary(p, trap),
            cutoff_omega(p).value
        );
    }

    // Any parameters, even far from trained ones, keep the boundary exact.
    for seed in 0..3 {
        let params = init_params(&ModelConfig {
            init_seed: seed,
            hidden_width: 64,
            ..ModelConfig::default()
        });
        let dev = boundary_deviation(&params, trap, 1000, seed)?;
        println!("seed {seed}: max boundary deviation over 1000 samples = {dev:.2e}");
    }
    Ok(())
}
