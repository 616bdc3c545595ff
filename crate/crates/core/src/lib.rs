//! Observability frames for linear time-invariant networks.
//!
//! A space-time sampling strategy (which subsystem is read at which time)
//! turns the initial-state reconstruction problem into a frame problem: the
//! samples are inner products of the initial state with the vectors
//! `e^{Aᵀt} e_i`. This crate builds those frames, scores them with
//! spectral estimation measures, sparsifies redundant ones and computes the
//! lower limits any sampling strategy must respect.

pub mod error;
pub mod export;
pub mod linalg;
pub mod netmodel;
pub mod rng;
pub mod sampling;
pub mod frame;
pub mod estimation;
pub mod sparsify;
pub mod limits;
pub mod harness;

pub use error::{Error, Result};
