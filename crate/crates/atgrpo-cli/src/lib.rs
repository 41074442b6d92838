//! Std companion to `atgrpo-core`: run configuration, line-delimited task
//! records, plain-text checkpoints, and the pipeline commands behind the
//! `atgrpo` binary (generate → annotate → sft → train → eval → report).

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod records;
