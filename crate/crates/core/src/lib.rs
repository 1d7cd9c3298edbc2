//! Hydrostatic steady states, sharp Rayleigh-Taylor growth rates and
//! perturbation solvers for 2D nonhomogeneous incompressible viscous flow on a
//! rectangle with no-slip walls.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod operators;
pub mod oracle;
pub mod report;
pub mod steady;
pub mod variational;

pub use error::{Error, Result};
pub use grid::{Grid, Placement, ScalarField, VectorField};
