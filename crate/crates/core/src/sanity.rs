//! Randomization sanity checks on exported feature tensors.
//!
//! An explanation that survives heavy randomization of the features it is
//! built from is not explaining those features. These helpers progressively
//! replace channels with noise and track how well the perturbed map still
//! ranks pixels like the original one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cis::Metric;
use crate::localization::{extract_box, iou, threshold_mask, BoundingBox, BoxMode};
use crate::map::{explain_pair, normalize_map, upsample_bilinear, ActivationMap};
use crate::tensor::FeatureMap;
use crate::{Error, Result, Scalar};

/// Number of channels `randomize_features` replaces for `fraction` of `channels`.
pub fn randomized_channel_count(channels: usize, fraction: f64) -> usize {
    let f = fraction.clamp(0.0, 1.0);
    ((f * channels as f64).ceil() as usize).min(channels)
}

/// Replace `⌈fraction·N⌉` channels with uniform noise on `[0, channel max]`.
///
/// The channel order is a seeded shuffle, so for a fixed seed the channels
/// replaced at a smaller fraction are a prefix of those replaced at a larger
/// one, and each channel's noise depends only on the seed and its index.
/// Channels with no positive value draw from `[0, 1]` instead. Untouched
/// channels are copied bit for bit.
pub fn randomize_features<T: Scalar>(
    features: &FeatureMap<T>,
    fraction: f64,
    seed: u64,
) -> FeatureMap<T> {
    let n = features.channels();
    let k = randomized_channel_count(n, fraction);
    if k == 0 {
        return features.clone();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let plane = features.plane_len();
    let mut values = features.values().to_vec();
    for &c in &order[..k] {
        let chan = &mut values[c * plane..(c + 1) * plane];
        let peak = chan
            .iter()
            .map(|v| v.acc())
            .fold(f64::NEG_INFINITY, f64::max);
        let scale = if peak > 0.0 { peak } else { 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64 + 1);
        for v in chan.iter_mut() {
            *v = T::from_acc(rng.random::<f64>() * scale);
        }
    }
    FeatureMap::new(n, features.height(), features.width(), values)
        .expect("noise keeps the shape and stays finite")
}

/// Spearman rank correlation over flattened pixels, ties given average ranks.
/// A constant input has no ranking, and the correlation is then 0.
pub fn rank_correlation<T: Scalar>(a: &ActivationMap<T>, b: &ActivationMap<T>) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "cannot correlate {}x{} with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(pearson(
        &average_ranks(a.values()),
        &average_ranks(b.values()),
    ))
}

fn average_ranks<T: Scalar>(values: &[T]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| {
        values[i]
            .partial_cmp(&values[j])
            .expect("finite map values")
    });
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // ranks start..end share the mean of (start+1)..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Tensors of one query/support episode.
#[derive(Clone, Debug)]
pub struct SanityEpisode<T> {
    pub query: FeatureMap<T>,
    pub supports: Vec<FeatureMap<T>>,
    pub metric: Metric,
    /// Annotation and the `(width, height)` it lives in, when available.
    pub truth: Option<(BoundingBox, (u32, u32))>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageResult {
    pub stage_label: String,
    pub fraction: f64,
    pub rank_correlation: f64,
    /// Perturbed IoU minus unperturbed IoU; `None` without an annotation.
    pub mean_iou_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SanityReport {
    pub stages: Vec<StageResult>,
}

/// Label used for a randomization stage.
pub fn stage_label(fraction: f64) -> String {
    format!("randomized {:.0}%", fraction * 100.0)
}

/// Perturbed query maps from one sweep, for rendering.
pub struct SweepMaps<T> {
    pub original: ActivationMap<T>,
    pub stages: Vec<ActivationMap<T>>,
}

/// Recompute the query SFAM with every tensor of the episode randomized at
/// each fraction and compare it with the unperturbed map.
///
/// All tensors in the episode share the seed, so the same channels are
/// replaced in the query and in every support.
pub fn sanity_sweep<T: Scalar>(
    episode: &SanityEpisode<T>,
    fractions: &[f64],
    seed: u64,
    threshold: f64,
    box_mode: BoxMode,
) -> Result<SanityReport> {
    sanity_sweep_maps(episode, fractions, seed, threshold, box_mode).map(|(r, _)| r)
}

/// [`sanity_sweep`] that also hands back the maps it compared.
pub fn sanity_sweep_maps<T: Scalar>(
    episode: &SanityEpisode<T>,
    fractions: &[f64],
    seed: u64,
    threshold: f64,
    box_mode: BoxMode,
) -> Result<(SanityReport, SweepMaps<T>)> {
    let original = explain_pair(&episode.query, &episode.supports, episode.metric)?.query_map;
    let base_iou = localization_iou(&original, episode.truth, threshold, box_mode)?;

    let mut stages = Vec::with_capacity(fractions.len());
    let mut maps = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "randomization fraction {fraction} outside [0, 1]"
            )));
        }
        let query = randomize_features(&episode.query, fraction, seed);
        let supports: Vec<_> = episode
            .supports
            .iter()
            .map(|s| randomize_features(s, fraction, seed))
            .collect();
        let perturbed = explain_pair(&query, &supports, episode.metric)?.query_map;
        let rank_correlation = rank_correlation(&original, &perturbed)?;
        let iou_now = localization_iou(&perturbed, episode.truth, threshold, box_mode)?;
        stages.push(StageResult {
            stage_label: stage_label(fraction),
            fraction,
            rank_correlation,
            mean_iou_delta: iou_now.zip(base_iou).map(|(now, base)| now - base),
        });
        maps.push(perturbed);
    }
    Ok((
        SanityReport { stages },
        SweepMaps {
            original,
            stages: maps,
        },
    ))
}

fn localization_iou<T: Scalar>(
    map: &ActivationMap<T>,
    truth: Option<(BoundingBox, (u32, u32))>,
    threshold: f64,
    box_mode: BoxMode,
) -> Result<Option<f64>> {
    let Some((truth, (w, h))) = truth else {
        return Ok(None);
    };
    let up = normalize_map(&upsample_bilinear(map, h as usize, w as usize)?);
    let mask = threshold_mask(&up, threshold);
    Ok(Some(
        extract_box(&mask, box_mode).map_or(0.0, |b| iou(&b, &truth)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_features(seed: u64, n: usize) -> FeatureMap<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(n, 5, 5, |_, _, _| rng.random_range(0.1f32..2.0)).unwrap()
    }

    fn changed_channels(a: &FeatureMap<f32>, b: &FeatureMap<f32>) -> usize {
        (0..a.channels())
            .filter(|&n| a.channel(n) != b.channel(n))
            .count()
    }

    fn map(v: &[f32]) -> ActivationMap<f32> {
        ActivationMap::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn randomize_examples() {
        let f = random_features(1, 8);
        assert_eq!(randomize_features(&f, 0.0, 9), f);

        let all = randomize_features(&f, 1.0, 9);
        assert_eq!(changed_channels(&f, &all), 8);
        assert_eq!(all, randomize_features(&f, 1.0, 9));
        assert_ne!(all, randomize_features(&f, 1.0, 10));

        assert_eq!(changed_channels(&f, &randomize_features(&f, 0.5, 3)), 4);
    }

    #[test]
    fn noise_stays_under_channel_peak() {
        let f = random_features(2, 6);
        let r = randomize_features(&f, 1.0, 4);
        for n in 0..6 {
            let peak = f.channel(n).iter().copied().fold(0.0, f32::max);
            assert!(r.channel(n).iter().all(|v| *v >= 0.0 && *v <= peak));
        }
    }

    #[test]
    fn zero_channels_still_change() {
        let f = FeatureMap::new(2, 2, 2, vec![0.0f32; 8]).unwrap();
        assert_eq!(changed_channels(&f, &randomize_features(&f, 1.0, 0)), 2);
    }

    #[test]
    fn randomization_cascades() {
        let f = random_features(3, 16);
        let half = randomize_features(&f, 0.5, 77);
        let full = randomize_features(&f, 1.0, 77);
        for n in 0..16 {
            if half.channel(n) != f.channel(n) {
                assert_eq!(half.channel(n), full.channel(n));
            }
        }
    }

    #[test]
    fn correlation_examples() {
        let a = map(&[0.1, 0.5, 0.3, 0.9, 0.2]);
        assert!((rank_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = map(&a.values().iter().map(|v| -v).collect::<Vec<_>>());
        assert!((rank_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(rank_correlation(&a, &map(&[2.0; 5])).unwrap(), 0.0);
        assert!(rank_correlation(&a, &map(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(
            average_ranks(&[3.0f32, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    /// Spearman via the textbook rank-difference formula on tie-free data.
    #[test]
    fn correlation_matches_rank_difference_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a: Vec<f32> = (0..40).map(|_| rng.random()).collect();
            let b: Vec<f32> = (0..40).map(|_| rng.random()).collect();
            let rank = |v: &[f32]| -> Vec<f64> {
                v.iter()
                    .map(|x| 1.0 + v.iter().filter(|y| *y < x).count() as f64)
                    .collect()
            };
            let (ra, rb) = (rank(&a), rank(&b));
            let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
            let n = 40.0;
            let want = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
            let got = rank_correlation(&map(&a), &map(&b)).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_shape_and_identity_stage() {
        let q = random_features(6, 8);
        let s = random_features(7, 8);
        let ep = SanityEpisode {
            query: q,
            supports: vec![s],
            metric: Metric::Euclidean,
            truth: None,
        };
        let r = sanity_sweep(&ep, &[0.0], 1, 0.2, BoxMode::Component).unwrap();
        assert_eq!(r.stages.len(), 1);
        assert!((r.stages[0].rank_correlation - 1.0).abs() < 1e-12);
        assert_eq!(r.stages[0].mean_iou_delta, None);

        let r = sanity_sweep(&ep, &[0.0, 0.5, 1.0], 1, 0.2, BoxMode::Component).unwrap();
        assert_eq!(r.stages.len(), 3);
        assert!(sanity_sweep(&ep, &[1.5], 1, 0.2, BoxMode::Component).is_err());
    }

    proptest! {
        #[test]
        fn exactly_ceil_fraction_channels_change(fraction in 0.0f64..=1.0, seed in any::<u64>()) {
            let f = random_features(8, 12);
            let r = randomize_features(&f, fraction, seed);
            prop_assert_eq!(changed_channels(&f, &r), (fraction * 12.0).ceil() as usize);
        }

        #[test]
        fn correlation_symmetric_and_monotone_invariant(
            a in prop::collection::vec(-3.0f32..3.0, 20),
            b in prop::collection::vec(-3.0f32..3.0, 20),
        ) {
            let wide = |v: &[f32]| ActivationMap::new(1, v.len(), v.iter().map(|x| *x as f64).collect()).unwrap();
            let (ma, mb) = (wide(&a), wide(&b));
            let r = rank_correlation(&ma, &mb).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - rank_correlation(&mb, &ma).unwrap()).abs() < 1e-12);
            let warped = ActivationMap::new(1, 20, ma.values().iter().map(|v| v.exp()).collect()).unwrap();
            prop_assert!((r - rank_correlation(&warped, &mb).unwrap()).abs() < 1e-12);
        }
    }
}
