//! Solitary waves with prescribed masses for the coupled cubic
//! Gross–Pitaevskii system with trapping potentials.
//!
//! The pipeline is: discretize a box ([`grid`]), fix potentials and
//! scattering lengths ([`model`]), compute the principal eigenpairs
//! ([`eigen`]), maximize the quartic functional on the constraint manifold
//! ([`maximizer`]), follow the branch in the H-norm budget ([`continuation`]),
//! probe the bifurcation from the eigenfunction branch ([`bifurcation`]) and
//! check orbital stability by direct time evolution ([`evolve`]). The
//! [`acceptance`] module runs the end-to-end verification suite.

pub mod error;
pub mod fielddump;
pub mod grid;
pub mod linalg;
pub mod eigen;
pub mod model;
pub mod maximizer;
pub mod continuation;
pub mod bifurcation;
pub mod evolve;
pub mod acceptance;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
