//! Numerical core for two-stage accelerated MRI reconstruction.
//!
//! Everything here is pure computation over owned buffers: the multi-coil
//! measurement model, a synthetic phantom generator, a small reverse-mode
//! autodiff tape, the channel-attention / prompt-conditioned U-Nets, the
//! unrolled k-space model, the image-domain refiner and the evaluation
//! metrics. The crate only needs `alloc`; the `std` feature merely lets
//! the GEMM backend use runtime CPU feature detection.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autograd;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod phantom;
pub mod physics;
pub mod refine;
pub mod tensor;
pub mod unrolled;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use tensor::Tensor;
