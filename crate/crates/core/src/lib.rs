//! A desk-scale laboratory for implicit autoencoders.
//!
//! Two GANs per model: a reconstruction GAN matching `(x, ẑ)` against
//! `(x̂, ẑ)` and a regularization GAN matching the aggregated posterior to a
//! prior. Everything runs on a small reverse-mode autodiff engine in `f64`,
//! and [`oracle`] checks the underlying distributional identities exactly
//! on finite spaces.

pub mod autodiff;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nets;
pub mod objectives;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
