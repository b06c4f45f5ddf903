//! Experiment harness around the unlearning library: run configuration,
//! command pipelines, and output records. The `unlearn` binary is a thin
//! argument-parsing shell over [`run`].

pub mod config;
pub mod error;
pub mod output;
pub mod run;
