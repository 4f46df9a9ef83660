//! Compressed-domain action recognition at desk scale.
//!
//! * [`codec`]: toy GOP codec with block motion and lossless residuals.
//! * [`xform`]: motion back-tracing, accumulated and augmented residuals, clip assembly.
//! * [`tensor`]: dense tensors with tape-based reverse-mode autodiff.
//! * [`model`]: mini multi-fiber 3D CNN plus parameter and FLOP accounting.
//! * [`distill`]: hint, soft-logit and cross-entropy losses, SGD, training loops.
//! * [`synth`]: the MovingShapes synthetic dataset.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is off.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod codec;
pub mod distill;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod xform;
