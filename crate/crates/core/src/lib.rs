//! Deflation-regularized physics-informed networks for multi-solution PDEs.
//!
//! A single trunk network is shared by `K` solutions, each selected by a
//! learned branch weight vector. Dirichlet data is imposed exactly through a
//! radial boundary lift and a polynomial cutoff, and a hinge penalty on the
//! pairwise grid-L² distances pushes the `K` solutions apart. The crate
//! applies this to the reduced two-dimensional Landau-de Gennes problem on
//! the unit square and checks the learned states against a finite-difference
//! reference solver.
//!
//! Module map:
//!
//! - [`geometry`]: polar coordinates, boundary data, radial lift, cutoff.
//! - [`model`]: trunk/branch network and the hard-constrained field.
//! - [`losses`]: PDE residual, PIML loss, deflation loss, energy.
//! - [`training`]: reverse-mode parameter gradients, Adam, training loop.
//! - [`oracle`]: finite-difference solver that finds the six stable states.
//! - [`harness`]: configuration, classification, exports, pipeline.

pub mod checkpoint;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod qfield;
pub mod training;

pub use error::{Error, Result};
pub use geometry::Point2;
pub use harness::config::RunConfig;
pub use losses::{CollocationGrid, LdGParams, LossConfig};
pub use model::{ModelConfig, ModelParams};
pub use qfield::QField;
