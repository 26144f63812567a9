//! Power-of-two post-training quantization for a small Vision Transformer.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: tensors, pinned rounding, shift primitives, RNG
//! - [`refmodel`]: float ViT, reverse-mode gradients, trainer, checkpoints
//! - [`quantizer`]: PoT scale calibration, PTF, smoothing, fake-quant reference
//! - [`intengine`]: integer-only inference (PS-MAC, integer LN, LIS softmax)
//! - [`mpsearch`]: Hessian-trace bit allocation and evolutionary refinement
//! - [`accelsim`]: cycle and energy model of the chunk-based accelerator
//! - [`cli`]: the `potvit` command-line pipeline

pub mod accelsim;
pub mod cli;
pub mod error;
pub mod intengine;
pub mod mpsearch;
pub mod numerics;
pub mod quantizer;
pub mod refmodel;

pub use error::{Error, Result};
