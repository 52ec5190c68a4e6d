#![cfg_attr(not(feature = "std"), no_std)]
//! Core algorithms for class-specific universal I/Q perturbations against
//! spectrogram object detectors.
//!
//! Everything here is allocation-only and free of I/O; the `cuap-forge`
//! crate adds file formats, orchestration and the command line.

extern crate alloc;

pub mod attack;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod rng;
pub mod scene;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
