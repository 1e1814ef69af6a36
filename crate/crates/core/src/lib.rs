//! Character-level variational autoencoders for text: a convolutional
//! encoder, a deconvolutional decoder, and optional LSTM or masked-convolution
//! language models on top, all built on a small reverse-mode autodiff engine.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`, which is what training and the CLI use.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod generate;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type ParamStore = nn::ParamStore<f64>;
