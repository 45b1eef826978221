//! Finite-element nudging for the heat equation with Neumann boundary data.
//!
//! The crate assembles Q1 operators on uniform grids of `[-1,1]²`, builds
//! observation strategies, advances the implicit-Euler nudged scheme and
//! evaluates errors against manufactured solutions.

pub mod analysis;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod problems;
pub mod strategies;
pub mod timestepper;

pub use error::{Error, Result};
