//! Transformer text classification regularized by a self-supervised
//! auxiliary loss (masked-token prediction or augmentation-type prediction),
//! along with the sequential task-adaptive pretraining baseline.

pub mod augment;
pub mod encoder;
pub mod error;
mod io;
pub mod masking;
pub mod metrics;
pub mod numerics;
pub mod runner;
pub mod text;
pub mod training;

pub use error::{Error, Result};
