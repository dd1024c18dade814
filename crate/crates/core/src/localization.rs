//! Box-level localization scoring for explanation maps.
//!
//! A normalized map is cut at a fraction of its maximum, a box is drawn around
//! the surviving pixels and compared with the annotated box by IoU. An episode
//! counts as a hit when IoU reaches [`HIT_IOU`].

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeTuple;
use serde::{Serialize, Serializer};

use crate::map::{normalize_map, ActivationMap};
use crate::{Error, Result, Scalar};

/// Default cut, as a fraction of the map maximum.
pub const DEFAULT_THRESHOLD: f64 = 0.2;

/// IoU at or above which a localization counts as correct.
pub const HIT_IOU: f64 = 0.5;

/// Half-open pixel box `[x_min, x_max) × [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::InvalidBox(
                x_min.into(),
                y_min.into(),
                x_max.into(),
                y_max.into(),
            ));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// From inclusive corners, as used by several annotation formats.
    pub fn from_inclusive(x_min: u32, y_min: u32, x_last: u32, y_last: u32) -> Result<Self> {
        Self::new(x_min, y_min, x_last + 1, y_last + 1)
    }

    pub fn x_min(&self) -> u32 {
        self.x_min
    }

    pub fn y_min(&self) -> u32 {
        self.y_min
    }

    pub fn x_max(&self) -> u32 {
        self.x_max
    }

    pub fn y_max(&self) -> u32 {
        self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x_min..self.x_max).contains(&x) && (self.y_min..self.y_max).contains(&y)
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(4)?;
        for v in self.as_array() {
            t.serialize_element(&v)?;
        }
        t.end()
    }
}

/// Intersection over union of two half-open boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let x0 = a.x_min.max(b.x_min);
    let y0 = a.y_min.max(b.y_min);
    let x1 = a.x_max.min(b.x_max);
    let y1 = a.y_max.min(b.y_max);
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let inter = u64::from(x1 - x0) * u64::from(y1 - y0);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Binary `height × width` mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} cells, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }
}

/// Cells at or above `fraction · max(map)`. A map with no positive value
/// yields an empty mask.
pub fn threshold_mask<T: Scalar>(map: &ActivationMap<T>, fraction: f64) -> Mask {
    let max = map.max().acc();
    let bits = if max > 0.0 {
        let cut = fraction * max;
        map.values().iter().map(|v| v.acc() >= cut).collect()
    } else {
        vec![false; map.values().len()]
    };
    Mask {
        height: map.height(),
        width: map.width(),
        bits,
    }
}

/// How a box is drawn around a thresholded mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxMode {
    /// Tight box around the largest 4-connected component.
    #[default]
    Component,
    /// Tight box around every set cell.
    All,
}

impl FromStr for BoxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "component" => Ok(BoxMode::Component),
            "all" => Ok(BoxMode::All),
            other => Err(Error::InvalidArgument(format!(
                "unknown box mode {other:?}, expected component or all"
            ))),
        }
    }
}

impl fmt::Display for BoxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoxMode::Component => "component",
            BoxMode::All => "all",
        })
    }
}

/// Tight box around the 4-connected component with the most cells.
///
/// Components are discovered in scan order and a later component only wins
/// with strictly more cells, so ties go to the one whose first cell comes first.
pub fn largest_component_bbox(mask: &Mask) -> Result<BoundingBox> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    let mut best: Option<(usize, [usize; 4])> = None;

    for start in 0..h * w {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        let mut extent = [usize::MAX, usize::MAX, 0, 0]; // col_min, row_min, col_max, row_max
        while let Some(k) = queue.pop_front() {
            let (i, j) = (k / w, k % w);
            size += 1;
            extent[0] = extent[0].min(j);
            extent[1] = extent[1].min(i);
            extent[2] = extent[2].max(j);
            extent[3] = extent[3].max(i);
            let mut visit = |n: usize| {
                if mask.bits[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if i > 0 {
                visit(k - w);
            }
            if i + 1 < h {
                visit(k + w);
            }
            if j > 0 {
                visit(k - 1);
            }
            if j + 1 < w {
                visit(k + 1);
            }
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, extent));
        }
    }

    let (_, e) = best.ok_or(Error::NoActivatedRegion)?;
    extent_box(e)
}

/// Tight box around every set cell.
pub fn mask_bbox(mask: &Mask) -> Result<BoundingBox> {
    let mut extent = [usize::MAX, usize::MAX, 0, 0];
    let mut any = false;
    for (k, _) in mask.bits.iter().enumerate().filter(|(_, b)| **b) {
        let (i, j) = (k / mask.width, k % mask.width);
        extent[0] = extent[0].min(j);
        extent[1] = extent[1].min(i);
        extent[2] = extent[2].max(j);
        extent[3] = extent[3].max(i);
        any = true;
    }
    if !any {
        return Err(Error::NoActivatedRegion);
    }
    extent_box(extent)
}

fn extent_box(e: [usize; 4]) -> Result<BoundingBox> {
    let c = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Shape(format!("coordinate {v} exceeds u32")))
    };
    BoundingBox::new(c(e[0])?, c(e[1])?, c(e[2] + 1)?, c(e[3] + 1)?)
}

/// Box for `mask` under `mode`.
pub fn extract_box(mask: &Mask, mode: BoxMode) -> Result<BoundingBox> {
    match mode {
        BoxMode::Component => largest_component_bbox(mask),
        BoxMode::All => mask_bbox(mask),
    }
}

/// One map to score against its annotation.
#[derive(Clone, Debug)]
pub struct Case<T> {
    pub episode_id: String,
    /// Map at annotation resolution.
    pub map: ActivationMap<T>,
    pub truth: BoundingBox,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    /// `None` when nothing survived the threshold.
    pub predicted_box: Option<BoundingBox>,
    pub truth_box: BoundingBox,
    pub iou: f64,
    pub hit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub mean_iou: f64,
    pub accuracy: f64,
    pub per_episode: Vec<EpisodeResult>,
}

/// Score one map: normalize, threshold, box, IoU.
pub fn evaluate_case<T: Scalar>(case: &Case<T>, fraction: f64, mode: BoxMode) -> EpisodeResult {
    let mask = threshold_mask(&normalize_map(&case.map), fraction);
    let predicted_box = extract_box(&mask, mode).ok();
    let iou = predicted_box.map_or(0.0, |b| iou(&b, &case.truth));
    EpisodeResult {
        episode_id: case.episode_id.clone(),
        predicted_box,
        truth_box: case.truth,
        iou,
        hit: iou >= HIT_IOU,
    }
}

/// Mean IoU and hit rate over `cases`, reduced in input order.
pub fn evaluate_episodes<T: Scalar>(
    cases: &[Case<T>],
    fraction: f64,
    mode: BoxMode,
) -> Result<Evaluation> {
    let per_episode: Vec<EpisodeResult> = cases
        .iter()
        .map(|c| evaluate_case(c, fraction, mode))
        .collect();
    summarize(per_episode)
}

/// Fold already-scored episodes into an [`Evaluation`].
pub fn summarize(per_episode: Vec<EpisodeResult>) -> Result<Evaluation> {
    if per_episode.is_empty() {
        return Err(Error::Empty("episode list"));
    }
    let n = per_episode.len() as f64;
    let mean_iou = per_episode.iter().map(|r| r.iou).sum::<f64>() / n;
    let accuracy = per_episode.iter().filter(|r| r.hit).count() as f64 / n;
    Ok(Evaluation {
        mean_iou,
        accuracy,
        per_episode,
    })
}
