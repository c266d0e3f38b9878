//! Bi-temporal remote sensing change detection built on a from-scratch
//! tensor engine: DCT multi-frequency token mixing, cross-temporal gating,
//! U-shaped per-stage encoders, a hybrid focal/dice loss and a small
//! training harness.

pub mod error;
pub mod harness;
pub mod interactors;
pub mod model;
pub mod nn;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
