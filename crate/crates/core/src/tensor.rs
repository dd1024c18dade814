//! Dense containers for final-layer activations and pooled embeddings, plus
//! the pooling, normalization and similarity primitives built on them.

use crate::{Error, Result, Scalar};

/// `channels × height × width` activations, row-major, indexed `(channel, row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "feature map dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} feature map needs {expected} values, got {}",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(FeatureMap {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(channels * height * width);
        for n in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    values.push(f(n, i, j));
                }
            }
        }
        Self::new(channels, height, width, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// The `H·W` plane of channel `n`.
    pub fn channel(&self, n: usize) -> &[T] {
        let len = self.plane_len();
        &self.values[n * len..(n + 1) * len]
    }

    pub fn get(&self, n: usize, i: usize, j: usize) -> T {
        self.values[(n * self.height + i) * self.width + j]
    }

    /// Multiply every activation by `factor`.
    pub fn scaled(&self, factor: T) -> Result<Self> {
        let values = self.values.iter().map(|&v| v * factor).collect();
        Self::new(self.channels, self.height, self.width, values)
    }
}

/// A pooled representation with at least two channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewChannels(values.len()));
        }
        check_finite(&values)?;
        Ok(EmbeddingVector(values))
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }

    /// Euclidean length, accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v.acc() * v.acc()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.0.iter().map(|&v| v * factor).collect())
    }
}

fn check_finite<T: Scalar>(values: &[T]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(idx) => Err(Error::NonFinite(idx)),
        None => Ok(()),
    }
}

fn check_same_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Spatial mean of every channel.
pub fn global_average_pool<T: Scalar>(map: &FeatureMap<T>) -> Result<EmbeddingVector<T>> {
    let area = map.plane_len() as f64;
    let pooled = (0..map.channels())
        .map(|n| {
            let sum: f64 = map.channel(n).iter().map(|v| v.acc()).sum();
            T::from_acc(sum / area)
        })
        .collect();
    EmbeddingVector::new(pooled)
}

/// `v / ‖v‖`. Fails with [`Error::DegenerateEmbedding`] on the zero vector.
pub fn l2_normalize<T: Scalar>(v: &EmbeddingVector<T>) -> Result<EmbeddingVector<T>> {
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    EmbeddingVector::new(
        v.values()
            .iter()
            .map(|x| T::from_acc(x.acc() / norm))
            .collect(),
    )
}

/// Class prototype: the elementwise mean of the pooled support embeddings.
pub fn prototype<T: Scalar>(supports: &[EmbeddingVector<T>]) -> Result<EmbeddingVector<T>> {
    let first = supports.first().ok_or(Error::Empty("support list"))?;
    for s in &supports[1..] {
        check_same_len(first.values(), s.values())?;
    }
    let k = supports.len() as f64;
    let mean = (0..first.len())
        .map(|n| {
            let sum: f64 = supports.iter().map(|s| s.values()[n].acc()).sum();
            T::from_acc(sum / k)
        })
        .collect();
    EmbeddingVector::new(mean)
}

pub fn euclidean_distance<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    check_same_len(a.values(), b.values())?;
    let sq: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| {
            let d = x.acc() - y.acc();
            d * d
        })
        .sum();
    Ok(T::from_acc(sq.sqrt()))
}

/// Dot product of the L2-normalized inputs, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    check_same_len(a.values(), b.values())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let dot: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x.acc() / na) * (y.acc() / nb))
        .sum();
    Ok(T::from_acc(dot.clamp(-1.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(v: &[f32]) -> EmbeddingVector<f32> {
        EmbeddingVector::from_slice(v).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> FeatureMap<f32> {
        FeatureMap::from_fn(n, h, w, |_, _, _| rng.random_range(-1.0f32..1.0)).unwrap()
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(FeatureMap::<f32>::new(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(FeatureMap::<f32>::new(0, 2, 2, vec![]).is_err());
        assert!(matches!(
            FeatureMap::new(1, 1, 2, vec![0.0f32, f32::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![1.0f32]),
            Err(Error::TooFewChannels(1))
        ));
        assert!(EmbeddingVector::new(vec![1.0f64, f64::INFINITY]).is_err());
    }

    #[test]
    fn pool_constant_and_small_cases() {
        let m = FeatureMap::new(2, 3, 3, [vec![7.0f32; 9], vec![0.0; 9]].concat()).unwrap();
        assert_eq!(global_average_pool(&m).unwrap().values(), &[7.0, 0.0]);

        let m = FeatureMap::new(2, 2, 2, vec![1.0f32, 3.0, 5.0, 7.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(global_average_pool(&m).unwrap().values()[0], 4.0);
    }

    #[test]
    fn pool_single_channel_is_too_short_for_an_embedding() {
        let m = FeatureMap::new(1, 2, 2, vec![1.0f32, 3.0, 5.0, 7.0]).unwrap();
        assert!(matches!(
            global_average_pool(&m),
            Err(Error::TooFewChannels(1))
        ));
    }

    #[test]
    fn pool_matches_brute_force_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, 8, 5, 5);
        let pooled = global_average_pool(&m).unwrap();
        for n in 0..8 {
            let mut s = 0.0f64;
            for i in 0..5 {
                for j in 0..5 {
                    s += m.get(n, i, j) as f64;
                }
            }
            assert!((pooled.values()[n] as f64 - s / 25.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_cases() {
        let u = l2_normalize(&emb(&[3.0, 4.0])).unwrap();
        assert_eq!(u.values(), &[0.6, 0.8]);
        let unit = emb(&[0.0, 1.0, 0.0]);
        assert_eq!(l2_normalize(&unit).unwrap(), unit);
        let err = l2_normalize(&emb(&[0.0, 0.0])).unwrap_err();
        assert!(err.to_string().contains("degenerate embedding"));
    }

    #[test]
    fn prototype_cases() {
        let one = emb(&[1.0, 2.0, 3.0]);
        assert_eq!(prototype(std::slice::from_ref(&one)).unwrap(), one);
        let mid = prototype(&[emb(&[0.0, 2.0]), emb(&[2.0, 0.0])]).unwrap();
        assert_eq!(mid.values(), &[1.0, 1.0]);
        assert!(matches!(prototype::<f32>(&[]), Err(Error::Empty(_))));
        assert!(matches!(
            prototype(&[emb(&[0.0, 1.0]), emb(&[0.0, 1.0, 2.0])]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn prototype_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let supports: Vec<_> = (0..5)
            .map(|_| EmbeddingVector::new((0..6).map(|_| rng.random::<f32>()).collect()).unwrap())
            .collect();
        let p = prototype(&supports).unwrap();
        for n in 0..6 {
            let mut s = 0.0f64;
            for k in &supports {
                s += k.values()[n] as f64;
            }
            assert!((p.values()[n] as f64 - s / 5.0).abs() < 1e-7);
        }
    }

    #[test]
    fn distance_and_cosine_cases() {
        let a = emb(&[0.3, -1.2, 4.0]);
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(
            euclidean_distance(&emb(&[0.0, 0.0]), &emb(&[3.0, 4.0])).unwrap(),
            5.0
        );
        assert!(euclidean_distance(&a, &emb(&[1.0, 2.0])).is_err());

        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(
            cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(),
            0.0
        );
        assert!(matches!(
            cosine_similarity(&emb(&[0.0, 0.0]), &emb(&[1.0, 0.0])),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn distance_and_cosine_match_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<f32> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f32> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut sq = 0.0f64;
            for n in 0..16 {
                sq += ((a[n] - b[n]) as f64).powi(2);
            }
            let d = euclidean_distance(&emb(&a), &emb(&b)).unwrap();
            assert!((d as f64 - sq.sqrt()).abs() < 1e-5);

            let na = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            let mut dot = 0.0f64;
            for n in 0..16 {
                dot += (a[n] as f64 / na) * (b[n] as f64 / nb);
            }
            let c = cosine_similarity(&emb(&a), &emb(&b)).unwrap();
            assert!((c as f64 - dot).abs() < 1e-6);
        }
    }

    #[test]
    fn generic_over_f64() {
        let a = EmbeddingVector::new(vec![3.0f64, 4.0]).unwrap();
        assert_eq!(l2_normalize(&a).unwrap().values(), &[0.6, 0.8]);
        assert_eq!(a.norm(), 5.0);
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-10.0f32..10.0, n)
    }

    proptest! {
        #[test]
        fn pool_is_linear(
            a in vec_strategy(3 * 4 * 4),
            b in vec_strategy(3 * 4 * 4),
            alpha in -3.0f32..3.0,
            beta in -3.0f32..3.0,
        ) {
            let ma = FeatureMap::new(3, 4, 4, a.clone()).unwrap();
            let mb = FeatureMap::new(3, 4, 4, b.clone()).unwrap();
            let mix: Vec<f32> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let pm = global_average_pool(&FeatureMap::new(3, 4, 4, mix).unwrap()).unwrap();
            let pa = global_average_pool(&ma).unwrap();
            let pb = global_average_pool(&mb).unwrap();
            for n in 0..3 {
                let lin = alpha * pa.values()[n] + beta * pb.values()[n];
                prop_assert!((pm.values()[n] - lin).abs() < 1e-5);
            }
        }

        #[test]
        fn normalize_idempotent_and_scale_invariant(v in vec_strategy(8), c in 0.01f32..100.0) {
            let e = EmbeddingVector::new(v).unwrap();
            prop_assume!(e.norm() > 1e-3);
            let u = l2_normalize(&e).unwrap();
            prop_assert!((u.norm() - 1.0).abs() < 1e-6);
            let uu = l2_normalize(&u).unwrap();
            let us = l2_normalize(&e.scaled(c).unwrap()).unwrap();
            for n in 0..8 {
                prop_assert!((u.values()[n] - uu.values()[n]).abs() < 1e-6);
                prop_assert!((u.values()[n] - us.values()[n]).abs() < 1e-6);
            }
        }

        #[test]
        fn prototype_permutation_invariant(a in vec_strategy(5), b in vec_strategy(5), c in vec_strategy(5)) {
            let (a, b, c) = (emb(&a), emb(&b), emb(&c));
            let p1 = prototype(&[a.clone(), b.clone(), c.clone()]).unwrap();
            let p2 = prototype(&[c, a, b]).unwrap();
            for n in 0..5 {
                prop_assert!((p1.values()[n] - p2.values()[n]).abs() < 1e-6);
            }
        }

        #[test]
        fn triangle_inequality(a in vec_strategy(6), b in vec_strategy(6), c in vec_strategy(6)) {
            let (a, b, c) = (emb(&a), emb(&b), emb(&c));
            let ab = euclidean_distance(&a, &b).unwrap();
            let bc = euclidean_distance(&b, &c).unwrap();
            let ac = euclidean_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-6 * (1.0 + ab + bc));
            prop_assert_eq!(ab, euclidean_distance(&b, &a).unwrap());
        }

        #[test]
        fn cosine_scale_invariant(a in vec_strategy(6), b in vec_strategy(6), c in 0.01f32..100.0) {
            let (a, b) = (emb(&a), emb(&b));
            prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
            let base = cosine_similarity(&a, &b).unwrap();
            let scaled = cosine_similarity(&a.scaled(c).unwrap(), &b).unwrap();
            prop_assert!((base - scaled).abs() < 1e-6);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
