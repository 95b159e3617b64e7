//! Physics-embedded inverse learning for wireless channel estimation and
//! parallel MRI reconstruction.

pub mod cli;
pub mod error;
pub mod guard;
pub mod io;
pub mod metrics;
pub mod mri;
pub mod ofdm;
pub mod params;
pub mod selftest;
pub mod tensor;
pub mod training;
pub mod wireless;

pub use error::{Error, Result};
