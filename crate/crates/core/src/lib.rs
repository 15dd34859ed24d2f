//! Importance-sampling SGD for feedforward networks.
//!
//! The crate trains small fully connected networks with a sampled-batch SGD
//! loop that can switch from uniform sampling to importance sampling once the
//! estimated variance reduction pays for the extra forward passes. Importance
//! scores come from a cheap upper bound to the per-sample gradient norm (the
//! norm of the loss gradient with respect to the final pre-activations), from
//! the loss value, or from the exact per-sample gradient norm.
//!
//! All numeric code is generic over the scalar type via [`Scalar`]
//! (`f32`/`f64`); concrete `f64` aliases are exported at the crate root.

pub mod datasets;
pub mod error;
pub mod losses;
pub mod nn;
pub mod probe;
pub mod sampling;
pub mod scalar;
pub mod scoring;
pub mod serialize;
pub mod trainer;
pub mod validate;
pub mod variance;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default `f64` instantiations of the core types.
pub type Network64 = nn::Network<f64>;
pub type ForwardTrace64 = nn::ForwardTrace<f64>;
pub type GradientSet64 = nn::GradientSet<f64>;
pub type Dataset64 = datasets::Dataset<f64>;
pub type ScoreVector64 = scoring::ScoreVector<f64>;
pub type TauEstimator64 = variance::TauEstimator<f64>;
