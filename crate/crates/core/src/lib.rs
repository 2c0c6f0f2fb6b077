//! Vector-quantized conditional normalizing flows for unsupervised
//! multi-class anomaly detection on multi-scale feature maps.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs and seeds; file formats, configuration files and
//! the command-line front end live in the `vqflow` crate.
//!
//! Layout:
//!
//! * [`tensor`] and [`tape`]: dense `f32`/`f64` tensors and a reverse-mode tape.
//! * [`nn`]: parameter registry, linear layers and small MLPs.
//! * [`codebook`]: nearest-codeword quantization, prototype and residual
//!   pattern codebooks, seeding and dead-code revival.
//! * [`flow`]: conditional affine coupling blocks and flow branches.
//! * [`density`]: Gaussian heads, dedicated and mixture log-densities.
//! * [`model`]: the assembled model and its forward pass.
//! * [`train`] and [`optim`]: the aggregated objective, Adam and the epoch loop.
//! * [`score`]: anomaly maps, image scores and AUROC.
//! * [`synth`]: deterministic synthetic multi-class feature data.
//! * [`gradcheck`]: central finite-difference gradient checking.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod codebook;
pub mod density;
mod error;
pub mod flow;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod optim;
mod real;
pub mod rng;
pub mod sample;
pub mod score;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
