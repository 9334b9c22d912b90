pub mod adaptivity;
pub mod checkpoint;
pub mod config;
pub mod coupling;
pub mod dg;
pub mod diagnostics;
pub mod error;
pub mod integrators;
pub mod linalg;
pub mod lowrank;
pub mod mesh;
pub mod orth;
pub mod output;
pub mod poisson;
pub mod quadrature;
pub mod registry;
pub mod scenarios;
pub mod simulation;

pub use error::{Error, Result};
