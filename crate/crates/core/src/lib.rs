//! Gradient-free visual explanations for metric-learning models.
//!
//! The crate computes channel-wise contribution importance scores (CIS) from a
//! pair of pooled embeddings, combines them with final-layer feature maps into
//! similar feature activation maps (SFAM), and scores the resulting heatmaps
//! against bounding-box annotations.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). Reductions
//! always accumulate in `f64` and in a fixed index order, so results are
//! reproducible bit for bit. The aliases below pin the `f32` flavour used by
//! exported tensors and by the `sfam` command-line tool.

pub mod baselines;
pub mod cis;
mod error;
pub mod localization;
pub mod map;
pub mod sanity;
mod scalar;
pub mod store;
pub mod synthetic;
pub mod tensor;

pub use cis::{cis_cosine, cis_euclidean, normalize_weights, Metric, WeightVector};
pub use error::{Error, Result};
pub use localization::{BoundingBox, BoxMode};
pub use map::{
    explain_pair, normalize_map, sfam_map, upsample_bilinear, ActivationMap, PairExplanation,
};
pub use scalar::Scalar;
pub use tensor::{
    cosine_similarity, euclidean_distance, global_average_pool, l2_normalize, prototype,
    EmbeddingVector, FeatureMap,
};

pub type FeatureMapF32 = FeatureMap<f32>;
pub type FeatureMapF64 = FeatureMap<f64>;
pub type EmbeddingF32 = EmbeddingVector<f32>;
pub type EmbeddingF64 = EmbeddingVector<f64>;
pub type WeightsF32 = WeightVector<f32>;
pub type WeightsF64 = WeightVector<f64>;
pub type ActivationMapF32 = ActivationMap<f32>;
pub type ActivationMapF64 = ActivationMap<f64>;
pub type PairExplanationF32 = PairExplanation<f32>;
