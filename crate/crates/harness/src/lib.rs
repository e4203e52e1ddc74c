//! Experiment harness: configuration, the pipeline stages behind the
//! `specarray` CLI, and sweep plots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::{AttackSpec, ExperimentConfig, ModelKind, Split};
pub use error::{HarnessError, Result};
