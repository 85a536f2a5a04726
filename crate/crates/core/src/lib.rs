//! Adversarial attacks on time-series classifiers.
//!
//! The crate bundles a small reverse-mode autodiff engine, a 1-D convolutional
//! classifier trained on top of it, the rank-swap attack (SWAP, SWAP-L2) with
//! the FGSM / BIM / GM / GM-L2 / SGM baselines, and the evaluation harness.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix it to `f64`.

pub mod attacks;
pub mod autodiff;
pub mod classifier;
pub mod data;
pub mod error;
pub mod eval;
pub mod prob;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type ModelWeights = classifier::ModelWeights<f64>;
pub type Dataset = data::Dataset<f64>;
pub type TimeSeries = data::TimeSeries<f64>;
pub type ProbVector = prob::ProbVector<f64>;
pub type AttackOutcome = attacks::AttackOutcome<f64>;

pub type ModelWeightsF32 = classifier::ModelWeights<f32>;
pub type DatasetF32 = data::Dataset<f32>;
