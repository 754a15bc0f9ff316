//! Optimal stopping of two-dimensional regime-switching diffusions.

pub mod boundary;
pub mod crosscheck;
pub mod detect;
pub mod error;
pub mod hjb;
pub mod model;
pub mod onedim;
pub mod registry;
pub mod regimes;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod value;

pub use error::{Error, Result};
