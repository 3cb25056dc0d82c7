//! Neural Chinese word segmentation: a self-attention CRF tagger with local
//! attention windows, a BiLSTM-CRF baseline, and lexicon-driven domain
//! adaptation through POS-tag generalization.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common use.

pub mod archive;
pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod model;
pub mod repr;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use archive::ModelArchive;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{Adaptation, ModelConfig, Segmenter};
pub use scalar::Scalar;
pub use tensor::Matrix;

pub type Segmenter64 = Segmenter<f64>;
pub type Segmenter32 = Segmenter<f32>;
pub type Archive64 = ModelArchive<f64>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
