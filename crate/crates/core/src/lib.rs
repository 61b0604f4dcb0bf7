//! Numerical laboratory comparing sole supervision with a supervised objective
//! augmented by a Wasserstein critic (WGAN-GP style adversarial regularization).
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense matrices, spectral/Frobenius norms, PCA.
//! - [`data`]: IDX / CIFAR-10 loaders, label randomization, mini-batching,
//!   synthetic objectives with known smoothness constants.
//! - [`model`]: bias-free ReLU/ELU networks with hand-written backward passes.
//! - [`critic`]: the Wasserstein critic and its gradient penalty.
//! - [`optimize`]: SGD with momentum, global clipping, clipping/step schedules.
//! - [`trainer`]: instrumented training loops and sweeps.
//! - [`theory`]: bound calculators and their numerical verification harnesses.
//! - [`nta`]: neuron topology analysis (PCA, exact t-SNE, affinity propagation).
//! - [`cli`]: config resolution and the `advreg` command line.

pub mod checkpoint;
pub mod cli;
pub mod critic;
pub mod data;
pub mod error;
pub mod linalg;
pub mod model;
pub mod nta;
pub mod optimize;
pub mod seed;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Matrix;
