//! Library surface of the workbench CLI: configuration handling and the
//! end-to-end experiment pipeline, kept separate from argument parsing so
//! integration tests can drive full runs in-process.

pub mod config;
pub mod pipeline;
