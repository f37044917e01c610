//! Command-line front end for the `lbac-core` crate: config files, the
//! fixed-pole baseline cache, training with checkpoints, evaluation and
//! SVG plots.

pub mod baseline;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod io;
pub mod plot;
pub mod train;

pub use error::{CliError, Result};
