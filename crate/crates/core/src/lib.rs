//! Smoothed first-order solver for the K-means SDP relaxation, with dual certificates
//! of exact recovery and a G-Latent simulator for variable clustering experiments.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod error;
pub mod experiments;
pub mod glatent;
pub mod kv;
pub mod matlin;
pub mod problem;
pub mod rounding;
pub mod solver;

pub use error::{Error, Result};
pub use matlin::{SpectralShift, SymMatrix};
pub use problem::{Partition, SdpInstance, SdpKind};
