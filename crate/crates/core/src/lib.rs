//! Null-space constrained online model editing for track-by-detection.
//!
//! Semantic weights predicted for the localization head are kept intact on
//! the semantic feature span while a geometry-derived perturbation is
//! projected into that span's orthogonal complement before being added.
//!
//! Everything numerical is generic over [`Real`]; the `*64` / `*32` aliases
//! below pin the scalar for callers that do not care.

pub mod editing;
pub mod error;
pub mod fusion;
pub mod init;
pub mod linalg;
pub mod predictor;
pub mod regression;
pub mod scalar;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::{tensor_read, tensor_write, FeatureKind, FeatureMap, Tensor};
pub use weights::{WeightRole, WeightVector};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Projector64 = linalg::Projector<f64>;
pub type Projector32 = linalg::Projector<f32>;
pub type WeightVector64 = WeightVector<f64>;
pub type WeightVector32 = WeightVector<f32>;
pub type ScoreMap64 = editing::ScoreMap<f64>;
pub type ScoreMap32 = editing::ScoreMap<f32>;
pub type EditContext64 = editing::EditContext<f64>;
pub type EditContext32 = editing::EditContext<f32>;
pub type PredictorParams64 = predictor::PredictorParams<f64>;
pub type PredictorParams32 = predictor::PredictorParams<f32>;
pub type BoxLTRB64 = regression::BoxLTRB<f64>;
pub type BoxLTRB32 = regression::BoxLTRB<f32>;
