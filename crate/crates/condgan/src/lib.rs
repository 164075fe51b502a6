//! Conditional image generation on a procedural shape dataset.
//!
//! The crate is self-contained: a small reverse-mode autodiff tape
//! ([`tensor`]), the layers and models built on it ([`layers`], [`models`]),
//! the adversarial loss family with mismatched-condition negatives
//! ([`losses`]), a deterministic renderer that serves as the dataset
//! ([`data`]), and the training/evaluation drivers behind the `condgan`
//! binary ([`train`], [`eval`], [`cli`]).

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod generate;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod ppm;
pub mod train;
pub mod models;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Graph, Tensor, Var};
