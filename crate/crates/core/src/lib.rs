//! Learning-based adaptive pole-placement control for a 6-DOF underwater
//! vehicle.
//!
//! The crate is `no_std` compatible (it needs `alloc`); IO, configuration
//! files and the command line live in the `lbac` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bier;
pub mod checkpoint;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod math;
pub mod nn;
pub mod sac;
pub mod train;

pub use error::{Error, Result};
