//! Planted-blob episode suites written to disk in manifest form.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::{Rgb, RgbImage};

use sfam_core::store::overlay::save_png;
use sfam_core::store::{write_manifest, write_tensor, EpisodeRecord, Tensor};
use sfam_core::synthetic::{nearest_class, planted_episode, PlantedConfig, PlantedEpisode};
use sfam_core::{normalize_map, upsample_bilinear, ActivationMap, FeatureMap, Metric};

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub episodes: usize,
    pub seed: u64,
    pub planted: PlantedConfig,
    /// Skip episodes whose query is not nearest to its own class.
    pub correct_only: bool,
    /// Metric for the nearest-class check; also recorded in the manifest.
    pub metric: Metric,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            episodes: 100,
            seed: 0,
            planted: PlantedConfig::default(),
            correct_only: true,
            metric: Metric::Euclidean,
        }
    }
}

/// Grayscale picture of the mean activation, so overlays have a backdrop.
fn backdrop(features: &FeatureMap<f32>, size: (u32, u32)) -> Result<RgbImage> {
    let n = features.channels() as f32;
    let mean = ActivationMap::from_fn(features.height(), features.width(), |i, j| {
        (0..features.channels())
            .map(|c| features.get(c, i, j))
            .sum::<f32>()
            / n
    })?;
    let up = normalize_map(&upsample_bilinear(&mean, size.1 as usize, size.0 as usize)?);
    Ok(RgbImage::from_fn(size.0, size.1, |x, y| {
        let v = (up.get(y as usize, x as usize) * 200.0).round() as u8;
        Rgb([v, v, v])
    }))
}

fn write_episode(
    dir: &Path,
    id: &str,
    ep: &PlantedEpisode,
    cfg: &SuiteConfig,
) -> Result<EpisodeRecord> {
    let query = PathBuf::from("tensors").join(format!("{id}_query.npy"));
    let support = PathBuf::from("tensors").join(format!("{id}_support.npy"));
    let image = PathBuf::from("images").join(format!("{id}.png"));
    let size = cfg.planted.image_size();
    write_tensor(dir.join(&query), &Tensor::Features(ep.query.clone()))?;
    write_tensor(
        dir.join(&support),
        &Tensor::Features(ep.supports[0].clone()),
    )?;
    save_png(dir.join(&image), &backdrop(&ep.query, size)?)?;
    Ok(EpisodeRecord {
        episode_id: id.to_string(),
        query_tensor_path: query,
        support_tensor_paths: vec![support],
        query_image_path: Some(image),
        truth_box: Some(ep.truth_box),
        image_size: size,
        metric: Some(cfg.metric),
    })
}

/// Generate `cfg.episodes` episodes under `dir` and return the manifest path.
///
/// Each episode pairs the query with its own-class support. Seeds run upward
/// from `cfg.seed`; with `correct_only`, seeds whose query is matched to a
/// wrong-class support are skipped.
pub fn write_planted_suite(dir: &Path, cfg: &SuiteConfig) -> Result<PathBuf> {
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut seed = cfg.seed;
    let give_up = cfg.seed.saturating_add(100 * cfg.episodes as u64 + 100);
    while records.len() < cfg.episodes {
        if seed >= give_up {
            bail!(
                "only {} of {} episodes classified correctly",
                records.len(),
                cfg.episodes
            );
        }
        let ep = planted_episode(&cfg.planted, seed)
            .with_context(|| format!("generating seed {seed}"))?;
        if !cfg.correct_only || nearest_class(&ep, cfg.metric)? == 0 {
            let id = format!("ep{:05}", records.len());
            records.push(write_episode(dir, &id, &ep, cfg)?);
        } else {
            log::debug!("seed {seed} misclassified, skipped");
        }
        seed += 1;
    }
    let path = dir.join("manifest.json");
    write_manifest(&path, &records)?;
    Ok(path)
}
