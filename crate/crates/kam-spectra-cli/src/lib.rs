//! Batch front-end for the spectral stability toolkit: declarative JSON
//! experiment configs in, reproducible JSON/CSV reports out.

pub mod config;
pub mod runner;
