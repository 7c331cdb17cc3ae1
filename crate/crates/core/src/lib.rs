//! Simulation and analysis of heralded single photons converted to telecom,
//! stored in an atomic frequency comb memory and analysed as time-bin qubits.

pub mod afc;
pub mod calibration;
pub mod config;
pub mod error;
pub mod figures;
pub mod lab;
pub mod oracle;
pub mod qfc;
pub mod rng;
pub mod runner;
pub mod sim;
pub mod source;
pub mod stats;
pub mod svg;
pub mod tomo;

pub use error::{Error, Result};
