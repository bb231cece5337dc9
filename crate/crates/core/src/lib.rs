//! Threat-field dataset synthesis and split-latent generative modeling.
//!
//! The crate covers the full pipeline behind the workbench:
//!
//! - [`tensor`] / [`rng`]: dense `f64` tensors and seeded, stream-split
//!   ChaCha8 randomness — the determinism backbone.
//! - [`autodiff`]: a reverse-mode tape with the dense, convolutional,
//!   layer-norm, and variational primitives the models need.
//! - [`field`]: radial-basis threat fields over stable linear dynamics;
//!   pool, subset, and noiseless support dataset synthesis.
//! - [`models`]: the S-VAE, VRNN, and split-latent S-VRNN with their
//!   losses and sampling procedures.
//! - [`training`]: seeded mini-batch Adam with gradient clipping.
//! - [`eval`]: Gram-form PCA, moment reports, and similarity distances.
//! - [`persistence`]: bit-exact dataset/checkpoint formats plus CSV and
//!   PGM exporters.

pub mod autodiff;
pub mod eval;
pub mod field;
pub mod linalg;
pub mod models;
pub mod persistence;
pub mod rng;
pub mod tensor;
pub mod training;

pub use field::{Dataset, Datum, Provenance};
pub use models::{LossBreakdown, Model, ModelKind, ModelSpec};
pub use rng::RngStream;
pub use tensor::Tensor;
