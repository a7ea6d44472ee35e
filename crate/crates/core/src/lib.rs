//! Effective coefficients of high-contrast visco-plastic fiber composites.

pub mod capacity;
pub mod cell;
pub mod energy;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod limit1d;
pub mod regimes;
pub mod verify;

pub use error::{Error, Result};
