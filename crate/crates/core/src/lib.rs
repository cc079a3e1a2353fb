//! Verification, classification and simulation of quantum error correcting
//! and error avoiding codes under finite operator-sum noise models.

pub mod error;
pub mod hilbert;
pub mod analysis;
pub mod channel;
pub mod cli;
pub mod codes;
pub mod noise;
pub mod sampling;

pub use error::{Error, Result};
