//! End-to-end pipeline for predicting 24-hour inpatient discharge from
//! EHR-style event streams: synthetic data generation, cohort construction,
//! featurization, tree and recurrent models, evaluation, and expected-utility
//! analysis. Every stage is deterministic given one root seed.

pub mod cohort;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod gru;
pub mod io;
pub mod mathx;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod timeutil;
pub mod trees;
pub mod utility;

pub use error::{Error, Result};
