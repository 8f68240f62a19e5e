//! Library surface of the `hsvar` CLI: configuration, ingestion, command
//! pipelines and result emission. The binary in `main.rs` is a thin
//! argument-parsing wrapper over [`commands`].

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
