//! Pull-request security review service built on `bugdar-core`: model
//! providers, GitHub and Slack clients, the workflow pipeline, the record
//! store, the evaluation harness and the command-line interface.

pub mod cli;
pub mod clock;
pub mod config;
pub mod eval;
pub mod github;
pub mod ingest;
pub mod pipeline;
pub mod providers;
pub mod retry;
pub mod server;
pub mod slack;
pub mod store;

pub use bugdar_core as core;
