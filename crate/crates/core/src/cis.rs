//! Channel-wise contribution importance scores.
//!
//! For two embeddings `q` and `s` of length `N`, channel `n` scores
//!
//! ```text
//! w_n = 1/(N-1) - (q_n - s_n)^2 / ((N-1) * sum_m (q_m - s_m)^2)
//! ```
//!
//! so channels whose values agree get the most weight and the scores sum to 1.
//! The cosine variant applies the same formula to the L2-normalized inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::{cosine_similarity, euclidean_distance, EmbeddingVector};
use crate::{Error, Result, Scalar};

/// Denominators below this are treated as zero.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Similarity metric the explained model decides with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }

    /// Raw CIS under this metric.
    pub fn weights<T: Scalar>(
        self,
        q: &EmbeddingVector<T>,
        s: &EmbeddingVector<T>,
    ) -> Result<WeightVector<T>> {
        match self {
            Metric::Euclidean => cis_euclidean(q, s),
            Metric::Cosine => cis_cosine(q, s),
        }
    }

    /// The decision value: Euclidean distance or cosine similarity.
    pub fn score<T: Scalar>(self, q: &EmbeddingVector<T>, s: &EmbeddingVector<T>) -> Result<T> {
        match self {
            Metric::Euclidean => euclidean_distance(q, s),
            Metric::Cosine => cosine_similarity(q, s),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric {other:?}, expected euclidean or cosine"
            ))),
        }
    }
}

/// Per-channel weights, either raw scores or max-min normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector<T> {
    values: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> WeightVector<T> {
    /// Wrap externally supplied weights that are already in `[0, 1]`.
    pub fn from_normalized(values: Vec<T>) -> Result<Self> {
        if let Some(idx) = values
            .iter()
            .position(|v| !v.is_finite() || *v < T::zero() || *v > T::one())
        {
            return Err(Error::InvalidArgument(format!(
                "normalized weight {idx} is {} (must lie in [0, 1])",
                values[idx]
            )));
        }
        Ok(WeightVector {
            values,
            normalized: true,
        })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Index of the first largest weight.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (n, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = n;
            }
        }
        best
    }
}

/// CIS for models that compare embeddings by Euclidean distance.
///
/// Identical inputs have no distance to apportion; every channel then gets `1/N`.
pub fn cis_euclidean<T: Scalar>(
    q: &EmbeddingVector<T>,
    s: &EmbeddingVector<T>,
) -> Result<WeightVector<T>> {
    let q: Vec<f64> = q.values().iter().map(|v| v.acc()).collect();
    let s: Vec<f64> = s.values().iter().map(|v| v.acc()).collect();
    cis_from_f64(&q, &s)
}

/// CIS for models that compare embeddings by cosine similarity.
///
/// The inputs are L2-normalized first. Parallel inputs (cosine 1) fall back to
/// the uniform `1/N` vector.
pub fn cis_cosine<T: Scalar>(
    q: &EmbeddingVector<T>,
    s: &EmbeddingVector<T>,
) -> Result<WeightVector<T>> {
    if q.len() != s.len() {
        return Err(Error::LengthMismatch {
            left: q.len(),
            right: s.len(),
        });
    }
    // Normalize in f64 so the scores do not pick up an extra rounding step.
    let unit = |v: &EmbeddingVector<T>| -> Result<Vec<f64>> {
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(v.values().iter().map(|x| x.acc() / norm).collect())
    };
    let (q, s) = (unit(q)?, unit(s)?);
    cis_from_f64(&q, &s)
}

fn cis_from_f64<T: Scalar>(q: &[f64], s: &[f64]) -> Result<WeightVector<T>> {
    if q.len() != s.len() {
        return Err(Error::LengthMismatch {
            left: q.len(),
            right: s.len(),
        });
    }
    let n = q.len();
    if n < 2 {
        return Err(Error::TooFewChannels(n));
    }
    let sq: Vec<f64> = q.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).collect();
    let total: f64 = sq.iter().sum();
    let values = if total < DEGENERATE_EPS {
        vec![T::from_acc(1.0 / n as f64); n]
    } else {
        let scale = (n - 1) as f64;
        sq.iter()
            .map(|d| T::from_acc((1.0 - d / total) / scale))
            .collect()
    };
    Ok(WeightVector {
        values,
        normalized: false,
    })
}

/// Max-min normalization onto `[0, 1]`. Equal weights map to all ones.
pub fn normalize_weights<T: Scalar>(w: &WeightVector<T>) -> WeightVector<T> {
    WeightVector {
        values: min_max_scale(&w.values, 1.0),
        normalized: true,
    }
}

/// `(v - min) / (max - min)`, or `fill` everywhere when the range vanishes.
pub(crate) fn min_max_scale<T: Scalar>(values: &[T], fill: f64) -> Vec<T> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.acc()), hi.max(v.acc()))
        });
    let range = hi - lo;
    if range.is_nan() || range < DEGENERATE_EPS {
        return vec![T::from_acc(fill); values.len()];
    }
    values
        .iter()
        .map(|v| T::from_acc((v.acc() - lo) / range))
        .collect()
}
