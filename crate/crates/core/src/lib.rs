//! Localization of a sonar-equipped underwater vehicle against a semantic
//! aerial map, plus a deterministic simulator and evaluation harness.

pub mod error;
pub mod filter;
pub mod geomap;
pub mod harness;
pub mod log;
pub mod matcher;
pub mod sonar;
pub mod simulator;

pub use error::{Error, Result};
