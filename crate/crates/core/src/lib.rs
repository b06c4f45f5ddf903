//! Boundary-based machine unlearning on small dense classifiers.
//!
//! The library is organized around a two-phase pipeline: an inner loop
//! ([`inner`]) that pushes each forget sample across the decision boundary
//! of the original model with perturbed sign-gradient steps and records the
//! class found there, and an outer loop ([`outer`]) that fine-tunes the
//! model on the relabeled samples. Reference unlearning methods live in
//! [`baselines`], forgetting/retention/membership-inference metrics in
//! [`eval`], and numerical checks of the underlying convergence and
//! ascent-direction results in [`theory`].
//!
//! All numeric code is generic over the [`scalar::Scalar`] floating-point
//! type. The type aliases at the crate root pin the `f64` instantiation
//! used by the CLI and the test suites; `f32` works the same way at lower
//! precision.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod inner;
pub mod nn;
pub mod outer;
pub mod rng;
pub mod scalar;
pub mod theory;
pub mod train;

pub use error::{Error, Result};

/// Default-precision model.
pub type Model = nn::Model<f64>;
/// Default-precision forward-pass output.
pub type PredictionBundle = nn::PredictionBundle<f64>;
/// Default-precision parameter gradients.
pub type Gradients = nn::Gradients<f64>;
/// Default-precision dataset.
pub type LabeledDataset = data::LabeledDataset<f64>;
/// Default-precision boundary-search result.
pub type BoundaryResult = inner::BoundaryResult<f64>;
/// Default-precision relabeled forget set.
pub type RelabeledForgetSet = inner::RelabeledForgetSet<f64>;
