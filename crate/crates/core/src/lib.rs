//! Reference implementation of an efficient video transformer built around
//! differentiable frame-saliency ranking, context-aware resolution compression
//! of non-saliency frames, and resolution-aligned space/time attention.
//!
//! Module map:
//!
//! - [`numerics`]: dense `f32` tensors, the handful of kernels the network needs,
//!   seeded Gaussian noise, TNSR file I/O and an arithmetic-operation counter.
//! - [`ranking`]: hard ranking, perturbed (smoothed) ranking and its Monte Carlo
//!   vector-Jacobian product.
//! - [`dccm`]: score-net, saliency-frame-reference compressor and the planted
//!   saliency training loop.
//! - [`rat`]: resolution-align transformer layer.
//! - [`model`]: full network assembly and the uncompressed baseline.
//! - [`flops`]: analytic cost model.

pub mod dccm;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod ranking;
pub mod rat;

pub use error::{Error, Result};
pub use numerics::{RandomStream, Tensor};
