//! Numerical toolkit for biharmonic wave maps into spheres on flat tori.

pub mod diagnostics;
pub mod error;
pub mod evolver;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod nonlinearity;
pub mod oracle;

pub use error::{Error, Result};
