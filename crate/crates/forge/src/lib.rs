//! File formats, artifact management and experiment orchestration for
//! `cuap-core`, shared by the `cuap-forge` binary and its tests.

pub mod artifact;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod hashing;
pub mod iqfile;
pub mod manifest;
pub mod render;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{ForgeError, Result};
pub use experiment::{DataKind, Workspace};
