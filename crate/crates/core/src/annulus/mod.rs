//! Planar annulus solves and singularity diagnostics.
//!
//! [`solve_dirichlet_2d`] runs a monotone wide-stencil scheme on a square
//! lattice masked to `r < |x| < R`. [`radial_stats`] samples min/max and
//! `Φ`-ratios on circles, and the classifiers in [`classify`] sort
//! functions on punctured neighbourhoods of `0` or `∞` by their behaviour
//! relative to the fundamental solutions.

pub mod classify;
pub mod grid;
pub mod solver;
pub mod stats;
pub mod stencil;

pub use classify::{
    classify_infinity, classify_origin, ClassifierConfig, Confidence, Fundamental, SingularityCase, SingularityReport,
};
pub use grid::{AnnulusGrid, Field, NodeKind};
pub use solver::{solve_dirichlet_2d, BoundaryTreatment, Relaxation, SolveReport, SolverConfig};
pub use stats::{radial_stats, RadialRow, RING_SAMPLES};
pub use stencil::{direction_decomposition, directions, DirectionWeight};
