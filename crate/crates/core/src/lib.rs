//! Clustering of mixed continuous, ordinal and nominal survey data with a
//! Poisson–Dirichlet process mixture of survey-weighted multivariate
//! Gaussians on a latent scale.
//!
//! The usual flow is [`schema::build_schema`] and [`schema::Dataset::new`],
//! then [`sampler::run_chain`], then [`postproc::similarity`] and
//! [`postproc::dahl_select`] to summarise the partition draws.

// `!(x > 0.0)` is used on purpose so that NaN fails the test
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod covariance;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod latent;
pub mod pdprocess;
pub mod postproc;
pub mod sampler;
pub mod schema;
pub mod simgen;

pub use config::{PriorPreset, Priors, Tuning};
pub use error::{Error, Result};
pub use sampler::{run_chain, ChainOutput, SamplerConfig, WeightMode};
pub use schema::{build_schema, Column, Dataset, Schema, VariableSpec};
