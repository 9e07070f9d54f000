//! Respiratory-cycle classification from grouped multi-channel spectrograms
//! with similarity-constrained deep embedding clustering and group-mix
//! contrastive learning.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for callers that do not care.

pub mod ablation;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod grouping;
pub mod idec;
pub mod io;
pub mod mixcl;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod signal;
pub mod synth;
pub mod tensor;
pub mod tfr;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TensorF32 = tensor::Tensor<f32>;
pub type TensorF64 = tensor::Tensor<f64>;
pub type ModelF32 = model::Model<f32>;
pub type ModelF64 = model::Model<f64>;
pub type DatasetF32 = trainer::Dataset<f32>;
pub type DatasetF64 = trainer::Dataset<f64>;
pub type FeatureExtractorF32 = tfr::FeatureExtractor<f32>;
pub type FeatureExtractorF64 = tfr::FeatureExtractor<f64>;
pub type CorpusF32 = corpus::Corpus<f32>;
pub type CorpusF64 = corpus::Corpus<f64>;
