//! Gradient-free comparison maps.

use crate::cis::min_max_scale;
use crate::map::{combine_channels, ActivationMap};
use crate::tensor::{global_average_pool, l2_normalize, EmbeddingVector, FeatureMap};
use crate::{Error, Result, Scalar};

/// Ranking activation map: channels weighted by the image's own max-min
/// normalized pooled activations. Only one image is involved, so the map is
/// the same whichever support it is being compared with.
pub fn ram_map<T: Scalar>(features: &FeatureMap<T>) -> Result<ActivationMap<T>> {
    let pooled = global_average_pool(features)?;
    let weights = min_max_scale(pooled.values(), 1.0);
    combine_channels(features, &weights)
}

/// Spatial decomposition of the cosine score: `Σ_n A_n(i, j) · ŝ_n`.
///
/// With average pooling the map sums to `H·W·‖V_q‖·cos(V_q, V_s)`.
pub fn decomposition_map<T: Scalar>(
    query_features: &FeatureMap<T>,
    support_embedding: &EmbeddingVector<T>,
) -> Result<ActivationMap<T>> {
    if support_embedding.len() != query_features.channels() {
        return Err(Error::LengthMismatch {
            left: query_features.channels(),
            right: support_embedding.len(),
        });
    }
    let unit = l2_normalize(support_embedding)?;
    combine_channels(query_features, unit.values())
}
