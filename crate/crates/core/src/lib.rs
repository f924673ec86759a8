//! Automated propensity score matching with artificial-task validation.
//!
//! The crate estimates propensity scores ([`propensity`]), matches the smaller
//! arm into the larger one ([`matching`]), validates matchings by covariate
//! balance ([`metrics`]) and by the A2A score computed on artificial tasks with
//! a known null effect ([`a2a`]), and selects among candidate pipelines
//! ([`strategy`]). [`pipeline`] ties the steps together and [`experiment`]
//! runs the synthetic evaluation suite built on [`synth`].

pub mod a2a;
pub mod assignment;
pub mod error;
pub mod experiment;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod propensity;
pub mod report;
pub mod rng;
pub mod strategy;
pub mod synth;
pub mod tabular;

pub use error::{Error, Result};
