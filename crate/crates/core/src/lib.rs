//! Quantum-heterodyne (Qdyne) sensing simulation and spectral estimation.

pub mod acquisition;
pub mod cli;
pub mod clock;
pub mod config;
pub mod error;
pub mod fmt;
pub mod nanonmr;
pub mod rng;
pub mod sensor;
pub mod signals;
pub mod spectral;

pub use error::{Error, Result};
