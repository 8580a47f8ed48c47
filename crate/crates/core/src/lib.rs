//! Dual-branch feature-level frequency decomposition network for single
//! image deraining.
//!
//! The crate is self-contained: a small reverse-mode differentiation engine
//! ([`autodiff`]), image I/O and label decomposition ([`image`]), the
//! direction-aware cross-median filter with its cross-branch exchange
//! modules ([`dcmf`]), the dual-branch network ([`net`]), losses and metrics
//! ([`loss`]), and the training/evaluation loop ([`train`]).

pub mod autodiff;
pub mod dcmf;
pub mod error;
pub mod fsutil;
pub mod image;
pub mod loss;
pub mod net;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
