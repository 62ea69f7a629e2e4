//! Sequential recommendation with self-attention blended with a fixed
//! Fourier-domain inductive bias and a learnable high-frequency rescaler.
//!
//! Modules follow the pipeline: [`data`] turns interaction logs into
//! leave-one-out splits, [`model`] holds the network and its checkpoint
//! format, [`trainer`] computes gradients and runs Adam, [`evaluation`]
//! ranks next-item targets, and [`diagnostics`] measures the spectral
//! behaviour of attention. [`spectral`] provides the band split shared by
//! the model and the diagnostics.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod model;
pub mod spectral;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use exec::Exec;
pub use model::{BsaRec, BsaRecParams, ModelConfig};
