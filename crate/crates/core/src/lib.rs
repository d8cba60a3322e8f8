//! Centroid inference for probability distributions known only through
//! linear moment constraints.
//!
//! Given coefficients `f_ji`, the solution set is the polytope
//! `S = {p ≥ 0 : Σ_i p_i = 1, Σ_i f_ji p_i = 1}`. Its centroid minimizes the
//! expected squared error when every member of `S` is equally likely.
//!
//! - [`saddle`]: first- and second-order saddle-point centroid estimates.
//! - [`maxent`]: the maximum-entropy member of `S`, for comparison.
//! - [`sampler`]: hit-and-run over `S`, the brute-force centroid.
//! - [`geometry`]: widths, log-volume and constraint strength.
//! - [`analysis`]: regime checks, instance generation, the N = 16 experiment.
//!
//! ```
//! use polycentroid::{ConstraintSet, SolverOptions, saddle};
//!
//! let cs = ConstraintSet::new(3, vec![vec![2.0, 1.0, 0.5]]).unwrap();
//! let sp = saddle::solve_saddle(&cs, &SolverOptions::default()).unwrap();
//! let p = saddle::centroid_first_order(&cs, &sp).unwrap();
//! assert!((p[2] - 4.0 / 9.0).abs() < 1e-12);
//! ```

pub mod analysis;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod maxent;
pub mod model;
pub mod numeric;
pub mod saddle;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{
    ConstraintSet, GeometrySummary, ProbabilityVector, Regime, SaddlePoint, SampleStats,
};
pub use saddle::SolverOptions;
