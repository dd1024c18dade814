//! Heatmap assembly: weighted channel sums, bilinear resizing and display
//! normalization, plus the end-to-end query/support pipeline.

use crate::cis::{normalize_weights, Metric, WeightVector};
use crate::tensor::{global_average_pool, prototype, FeatureMap};
use crate::{Error, Result, Scalar};

/// `height × width` scalar map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> ActivationMap<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "map dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(ActivationMap {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.width + j]
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// `(row, col)` of the first maximum in scan order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Unclamped `Σ_n w_n · A_n(i, j)`. Linear in `weights`.
pub fn combine_channels<T: Scalar>(
    features: &FeatureMap<T>,
    weights: &[T],
) -> Result<ActivationMap<T>> {
    if weights.len() != features.channels() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: features.channels(),
        });
    }
    let plane = features.plane_len();
    let mut acc = vec![0.0f64; plane];
    for (n, w) in weights.iter().enumerate() {
        let w = w.acc();
        for (dst, a) in acc.iter_mut().zip(features.channel(n)) {
            *dst += w * a.acc();
        }
    }
    ActivationMap::new(
        features.height(),
        features.width(),
        acc.into_iter().map(T::from_acc).collect(),
    )
}

/// SFAM: feature channels weighted by normalized CIS, negative sums clamped to 0.
pub fn sfam_map<T: Scalar>(
    features: &FeatureMap<T>,
    weights: &WeightVector<T>,
) -> Result<ActivationMap<T>> {
    if !weights.is_normalized() {
        return Err(Error::RawWeights);
    }
    let mut map = combine_channels(features, weights.values())?;
    for v in &mut map.values {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    Ok(map)
}

/// Bilinear resize with half-pixel centers.
///
/// Output pixel `(i, j)` samples the source at
/// `((i + 0.5)·H/out_h − 0.5, (j + 0.5)·W/out_w − 0.5)`, clamped to the source
/// grid. Equal sizes return the input unchanged.
pub fn upsample_bilinear<T: Scalar>(
    map: &ActivationMap<T>,
    out_h: usize,
    out_w: usize,
) -> Result<ActivationMap<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "output dimensions must be positive, got {out_h}x{out_w}"
        )));
    }
    let (h, w) = (map.height, map.width);
    if (h, w) == (out_h, out_w) {
        return Ok(map.clone());
    }
    let rows: Vec<(usize, usize, f64)> = (0..out_h).map(|i| source_taps(i, h, out_h)).collect();
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|j| source_taps(j, w, out_w)).collect();

    let mut values = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let a = map.get(y0, x0).acc();
            let b = map.get(y0, x1).acc();
            let c = map.get(y1, x0).acc();
            let d = map.get(y1, x1).acc();
            let top = (1.0 - fx) * a + fx * b;
            let bottom = (1.0 - fx) * c + fx * d;
            let v = (1.0 - fy) * top + fy * bottom;
            // Rounding must not push a blend outside its four neighbours.
            let lo = a.min(b).min(c).min(d);
            let hi = a.max(b).max(c).max(d);
            values.push(T::from_acc(v.clamp(lo, hi)));
        }
    }
    ActivationMap::new(out_h, out_w, values)
}

fn source_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * src_len as f64) / dst_len as f64 - 0.5;
    let pos = pos.clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Stretch to `[0, 1]`. A constant map becomes all zeros.
pub fn normalize_map<T: Scalar>(map: &ActivationMap<T>) -> ActivationMap<T> {
    let lo = map.min().acc();
    let hi = map.max().acc();
    let range = hi - lo;
    let values = if range > 0.0 {
        map.values
            .iter()
            .map(|v| T::from_acc((v.acc() - lo) / range))
            .collect()
    } else {
        vec![T::zero(); map.values.len()]
    };
    ActivationMap {
        height: map.height,
        width: map.width,
        values,
    }
}

/// Output of [`explain_pair`].
#[derive(Clone, Debug)]
pub struct PairExplanation<T> {
    /// Raw SFAM of the query at feature resolution.
    pub query_map: ActivationMap<T>,
    /// One raw SFAM per support image, in input order.
    pub support_maps: Vec<ActivationMap<T>>,
    /// Normalized weights shared by every map above.
    pub weights: WeightVector<T>,
    /// Decision value between the query embedding and the prototype:
    /// Euclidean distance or cosine similarity, depending on the metric.
    pub similarity: T,
}

/// Explain why `query` matches the class represented by `supports`.
///
/// Pools every feature map, averages the supports into a prototype, scores the
/// channels against it and applies the one normalized weight vector to the
/// query and to each support.
pub fn explain_pair<T: Scalar>(
    query: &FeatureMap<T>,
    supports: &[FeatureMap<T>],
    metric: Metric,
) -> Result<PairExplanation<T>> {
    if supports.is_empty() {
        return Err(Error::Empty("support list"));
    }
    for s in supports {
        if s.channels() != query.channels() {
            return Err(Error::LengthMismatch {
                left: query.channels(),
                right: s.channels(),
            });
        }
    }
    let q = global_average_pool(query)?;
    let pooled = supports
        .iter()
        .map(global_average_pool)
        .collect::<Result<Vec<_>>>()?;
    let proto = prototype(&pooled)?;

    let weights = normalize_weights(&metric.weights(&q, &proto)?);
    let similarity = metric.score(&q, &proto)?;
    let query_map = sfam_map(query, &weights)?;
    let support_maps = supports
        .iter()
        .map(|s| sfam_map(s, &weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(PairExplanation {
        query_map,
        support_maps,
        weights,
        similarity,
    })
}
