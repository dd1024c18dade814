//! Planted-blob episodes with known ground truth.
//!
//! Every image of an N-way episode is a `channels × size × size` feature map
//! with low background noise. The query and its own-class support each carry
//! a Gaussian blob on the class channel, placed inside their object box; each
//! of the remaining channels carries a uniform-noise patch in exactly one of
//! the two images, placed outside that image's object box. Supports of the
//! other classes take the same complement of the query's distractors but
//! carry their object on a different class channel.
//!
//! The Gaussian is shaped so that it falls to 20 % of its peak at the box
//! edges, which is where a map thresholded at 0.2 should cut.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cis::Metric;
use crate::localization::BoundingBox;
use crate::tensor::{global_average_pool, FeatureMap};
use crate::{Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    pub channels: usize,
    /// Feature maps are `size × size`.
    pub size: usize,
    /// Image pixels per feature cell; annotations live at `size · stride`.
    pub stride: u32,
    /// Number of classes per episode (one support each).
    pub ways: usize,
    /// Object box side lengths, in cells, drawn from this inclusive range.
    pub box_side: (usize, usize),
    /// Side length of each distractor patch, in cells.
    pub patch_side: usize,
    /// Distractor cells draw uniformly from this range. A wide range gives the
    /// distractors unequal pooled strength, and the weaker ones keep a sizeable
    /// normalized weight.
    pub patch_range: (f32, f32),
    /// Background cells draw uniformly from `[0, background)`.
    pub background: f32,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            channels: 16,
            size: 10,
            stride: 8,
            ways: 5,
            box_side: (3, 5),
            patch_side: 3,
            patch_range: (0.6, 0.7),
            background: 0.02,
        }
    }
}

impl PlantedConfig {
    /// `(width, height)` of the image grid the boxes refer to.
    pub fn image_size(&self) -> (u32, u32) {
        let side = self.size as u32 * self.stride;
        (side, side)
    }
}

/// One generated episode. Class 0 is the query's class.
#[derive(Clone, Debug)]
pub struct PlantedEpisode {
    pub query: FeatureMap<f32>,
    /// One support per class; index 0 shares the query's class.
    pub supports: Vec<FeatureMap<f32>>,
    /// The channel carrying the shared object.
    pub shared_channel: usize,
    /// Object box in feature cells.
    pub feature_box: BoundingBox,
    /// Object box at image resolution, the localization target.
    pub truth_box: BoundingBox,
}

/// `√(2 ln 5)`: a Gaussian drops to 1/5 of its peak at this many sigmas.
const CUT_SIGMAS: f64 = 1.794_122_577_994_101_7;

struct Canvas {
    channels: usize,
    size: usize,
    values: Vec<f32>,
}

impl Canvas {
    fn new(cfg: &PlantedConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = cfg.channels * cfg.size * cfg.size;
        let values = (0..n)
            .map(|_| rng.random::<f32>() * cfg.background)
            .collect();
        Canvas {
            channels: cfg.channels,
            size: cfg.size,
            values,
        }
    }

    fn add(&mut self, c: usize, i: usize, j: usize, v: f32) {
        self.values[(c * self.size + i) * self.size + j] += v;
    }

    fn gaussian(&mut self, c: usize, b: &BoundingBox) {
        let cx = f64::from(b.x_min() + b.x_max()) / 2.0;
        let cy = f64::from(b.y_min() + b.y_max()) / 2.0;
        let sx = f64::from(b.width()) / 2.0 / CUT_SIGMAS;
        let sy = f64::from(b.height()) / 2.0 / CUT_SIGMAS;
        for i in 0..self.size {
            for j in 0..self.size {
                let dx = (j as f64 + 0.5 - cx) / sx;
                let dy = (i as f64 + 0.5 - cy) / sy;
                self.add(c, i, j, (-0.5 * (dx * dx + dy * dy)).exp() as f32);
            }
        }
    }

    fn patch(&mut self, c: usize, b: &BoundingBox, range: (f32, f32), rng: &mut ChaCha8Rng) {
        for i in b.y_min()..b.y_max() {
            for j in b.x_min()..b.x_max() {
                let v = rng.random_range(range.0..range.1);
                self.add(c, i as usize, j as usize, v);
            }
        }
    }

    fn finish(self) -> Result<FeatureMap<f32>> {
        FeatureMap::new(self.channels, self.size, self.size, self.values)
    }
}

fn random_box(cfg: &PlantedConfig, rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.random_range(cfg.box_side.0..=cfg.box_side.1);
    let h = rng.random_range(cfg.box_side.0..=cfg.box_side.1);
    let x = rng.random_range(0..=cfg.size - w);
    let y = rng.random_range(0..=cfg.size - h);
    BoundingBox::new(x as u32, y as u32, (x + w) as u32, (y + h) as u32).expect("positive sides")
}

fn overlaps(a: &BoundingBox, b: &BoundingBox) -> bool {
    a.x_min() < b.x_max() && b.x_min() < a.x_max() && a.y_min() < b.y_max() && b.y_min() < a.y_max()
}

/// A patch position that avoids `object`; `None` if none was found.
fn patch_box(
    cfg: &PlantedConfig,
    object: &BoundingBox,
    rng: &mut ChaCha8Rng,
) -> Option<BoundingBox> {
    let side = cfg.patch_side;
    for _ in 0..100 {
        let x = rng.random_range(0..=cfg.size - side) as u32;
        let y = rng.random_range(0..=cfg.size - side) as u32;
        let b = BoundingBox::new(x, y, x + side as u32, y + side as u32).expect("positive side");
        if !overlaps(&b, object) {
            return Some(b);
        }
    }
    None
}

/// Build one image of class channel `class_channel` with its own object box.
/// `owned` lists the distractor channels that get a patch in this image.
fn image(
    cfg: &PlantedConfig,
    class_channel: usize,
    object: &BoundingBox,
    owned: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMap<f32>> {
    let mut canvas = Canvas::new(cfg, rng);
    canvas.gaussian(class_channel, object);
    for &c in owned {
        if let Some(b) = patch_box(cfg, object, rng) {
            canvas.patch(c, &b, cfg.patch_range, rng);
        }
    }
    canvas.finish()
}

/// Deterministic episode for `seed`.
pub fn planted_episode(cfg: &PlantedConfig, seed: u64) -> Result<PlantedEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.channels;

    // Distinct class channel per way.
    let mut class_channels: Vec<usize> = Vec::with_capacity(cfg.ways);
    while class_channels.len() < cfg.ways.min(n) {
        let c = rng.random_range(0..n);
        if !class_channels.contains(&c) {
            class_channels.push(c);
        }
    }
    let shared = class_channels[0];

    // Every other channel is a distractor owned by the query or by the support.
    let q_owned: Vec<usize> = (0..n)
        .filter(|&c| c != shared && rng.random::<bool>())
        .collect();
    let support_owned = |class_channel: usize| -> Vec<usize> {
        (0..n)
            .filter(|&c| c != shared && c != class_channel && !q_owned.contains(&c))
            .collect()
    };

    let feature_box = random_box(cfg, &mut rng);
    let query = image(cfg, shared, &feature_box, &q_owned, &mut rng)?;

    let mut supports = Vec::with_capacity(cfg.ways);
    // Same object size keeps the shared channel's pooled value matched.
    let (w, h) = (feature_box.width(), feature_box.height());
    let dx = rng.random_range(0..=(cfg.size as u32 - w));
    let dy = rng.random_range(0..=(cfg.size as u32 - h));
    let support_box = BoundingBox::new(dx, dy, dx + w, dy + h)?;
    supports.push(image(
        cfg,
        shared,
        &support_box,
        &support_owned(shared),
        &mut rng,
    )?);

    for &class_channel in &class_channels[1..] {
        let object = random_box(cfg, &mut rng);
        supports.push(image(
            cfg,
            class_channel,
            &object,
            &support_owned(class_channel),
            &mut rng,
        )?);
    }

    let s = cfg.stride;
    let truth_box = BoundingBox::new(
        feature_box.x_min() * s,
        feature_box.y_min() * s,
        feature_box.x_max() * s,
        feature_box.y_max() * s,
    )?;
    Ok(PlantedEpisode {
        query,
        supports,
        shared_channel: shared,
        feature_box,
        truth_box,
    })
}

/// Index of the support whose pooled embedding best matches the query's
/// under `metric`; ties go to the lower index.
pub fn nearest_class(episode: &PlantedEpisode, metric: Metric) -> Result<usize> {
    let q = global_average_pool(&episode.query)?;
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in episode.supports.iter().enumerate() {
        let score = metric.score(&q, &global_average_pool(s)?)?.acc();
        let key = match metric {
            Metric::Euclidean => -score,
            Metric::Cosine => score,
        };
        if best.is_none_or(|(_, b)| key > b) {
            best = Some((k, key));
        }
    }
    best.map(|(k, _)| k)
        .ok_or(crate::Error::Empty("support list"))
}
