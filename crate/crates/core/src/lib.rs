//! Scaling exponents and fundamental solutions of homogeneous fully nonlinear
//! elliptic operators.
//!
//! * [`operator`] evaluates Pucci, linear, Isaacs and spectral operators.
//! * [`radial`] handles rotationally invariant operators in any dimension.
//! * [`circle`] computes the exponent and angular profile of a general
//!   operator in the plane.
//! * [`annulus`] solves Dirichlet problems on annuli with a monotone scheme
//!   and classifies isolated singularities.
//! * [`game`] simulates the stochastic differential game whose value solves
//!   the corresponding Isaacs equation.

pub mod annulus;
pub mod circle;
pub mod error;
pub mod game;
pub mod operator;
pub mod radial;
pub mod sampling;

pub use error::{Error, Result};
pub use operator::{EllipticityPair, OperatorKind, OperatorSpec, SymMatrix};
