//! Configuration, initial data, file formats and experiment drivers.

pub mod config;
pub mod initial;
pub mod io;
pub mod run;
pub mod studies;
pub mod verify;

pub use config::RunConfig;
pub use initial::{initial_data, mollify_initial_data};
pub use run::{run, ExitStatus, RunOutcome};
pub use studies::{bona_smith_study, continuity_study, convergence_study, sweep_viscosity};
pub use verify::verify;
