//! Numerical toolkit for elastic structures made of thin plates.
//!
//! The crate follows the chain skeleton → sampled 3D fields → decompositions
//! (elementary plate/rod displacements, Kirchhoff–Love split, unfolding) →
//! discrete skeleton spaces (inextensional/extensional) → limit membrane and
//! bending solvers → a 3D reference solver with a δ→0 convergence harness.

pub mod decompose;
pub mod error;
pub mod fields;
pub mod fixtures;
pub mod limit_solvers;
pub mod linalg;
pub mod mesh;
pub mod reference3d;
pub mod skeleton;
pub mod spaces;

pub use error::{Error, Result};
