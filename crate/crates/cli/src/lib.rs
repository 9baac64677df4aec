//! Library surface of the `toolforge` binary: configuration, stage
//! runners, statistics, and run manifests. Kept as a library so
//! integration tests can drive stages in-process.

pub mod config;
pub mod manifest;
pub mod stages;
pub mod stats;
