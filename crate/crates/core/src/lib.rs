//! Spurious local minima of piecewise linear networks: explicit constructions
//! and numerical certificates.

pub mod activations;
pub mod cells;
pub mod construction;
pub mod error;
pub mod io;
pub mod linear_baseline;
pub mod network;
pub mod numeric;
pub mod pipeline;
pub mod separation;
pub mod verification;

pub use error::{Error, Result};
