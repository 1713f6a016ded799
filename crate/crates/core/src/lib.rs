//! A desk-scale machine-unlearning laboratory.
//!
//! The crate trains small MLP classifiers on synthetic clustered data,
//! removes a forget set with contrastive unlearning (CoUn) or one of the
//! baseline methods, and scores the result against a model retrained from
//! scratch on the retain set.
//!
//! Numerical code is generic over [`scalar::Scalar`]; the aliases below fix
//! the `f64` instantiation used by the training pipeline.

pub mod datagen;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod harness;
pub mod losses;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod theory;
pub mod unlearn;

pub use error::{Error, Result};
pub use scalar::{Exact, Rational, Scalar};

pub type Tensor = diffcore::Tensor<f64>;
pub type Graph = diffcore::Graph<f64>;
pub type Model = model::Model<f64>;
