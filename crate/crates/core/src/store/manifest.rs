//! Episode manifests: which tensors form a query/support episode, plus the
//! optional image and annotation used for overlays and localization scoring.
//!
//! The document is either a bare JSON array of episodes or an object
//!
//! ```json
//! {"schema_version": 1, "box_convention": "half_open", "episodes": [ ... ]}
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cis::Metric;
use crate::localization::BoundingBox;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// How `truth_box` corners are written in the file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxConvention {
    /// `[x_min, y_min, x_max, y_max)`, used internally.
    #[default]
    HalfOpen,
    /// Last covered pixel included; converted on load by adding 1 to the max corner.
    Inclusive,
}

/// One validated episode with absolute paths.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub query_tensor_path: PathBuf,
    pub support_tensor_paths: Vec<PathBuf>,
    pub query_image_path: Option<PathBuf>,
    pub truth_box: Option<BoundingBox>,
    /// `(width, height)` of the image the box and overlays refer to.
    pub image_size: (u32, u32),
    pub metric: Option<Metric>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEpisode {
    episode_id: String,
    query_tensor_path: PathBuf,
    support_tensor_paths: Vec<PathBuf>,
    #[serde(default)]
    query_image_path: Option<PathBuf>,
    #[serde(default)]
    truth_box: Option<[i64; 4]>,
    image_size: [u32; 2],
    #[serde(default)]
    metric: Option<Metric>,
    #[serde(default)]
    box_convention: Option<BoxConvention>,
}

#[derive(Serialize)]
struct OutEpisode<'a> {
    episode_id: &'a str,
    query_tensor_path: &'a Path,
    support_tensor_paths: &'a [PathBuf],
    #[serde(skip_serializing_if = "Option::is_none")]
    query_image_path: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth_box: Option<BoundingBox>,
    image_size: [u32; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    metric: Option<Metric>,
}

#[derive(Serialize)]
struct OutManifest<'a> {
    schema_version: u32,
    box_convention: BoxConvention,
    episodes: Vec<OutEpisode<'a>>,
}

/// Load and validate every episode, failing on the first bad one.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| doc_error(path, format!("invalid JSON: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();

    let (episodes, convention) = match doc {
        Value::Array(items) => (items, BoxConvention::HalfOpen),
        Value::Object(mut obj) => {
            match obj.get("schema_version").and_then(Value::as_u64) {
                Some(v) if v == u64::from(SCHEMA_VERSION) => {}
                Some(v) => return Err(doc_error(path, format!("unsupported schema_version {v}"))),
                None => return Err(doc_error(path, "missing schema_version".into())),
            }
            let convention = match obj.remove("box_convention") {
                Some(v) => serde_json::from_value(v)
                    .map_err(|e| doc_error(path, format!("box_convention: {e}")))?,
                None => BoxConvention::HalfOpen,
            };
            match obj.remove("episodes") {
                Some(Value::Array(items)) => (items, convention),
                _ => return Err(doc_error(path, "expected an \"episodes\" array".into())),
            }
        }
        _ => {
            return Err(doc_error(
                path,
                "expected an array or object at top level".into(),
            ))
        }
    };

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(episodes.len());
    for (idx, item) in episodes.into_iter().enumerate() {
        let id = item
            .get("episode_id")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{idx}"));
        let fail = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            episode_id: id.clone(),
            msg,
        };
        let raw: RawEpisode = serde_json::from_value(item).map_err(|e| fail(e.to_string()))?;
        if !seen.insert(raw.episode_id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                episode_id: raw.episode_id,
            });
        }
        records.push(validate(raw, &base, convention).map_err(fail)?);
    }
    Ok(records)
}

fn doc_error(path: &Path, msg: String) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        episode_id: "-".into(),
        msg,
    }
}

fn validate(
    raw: RawEpisode,
    base: &Path,
    convention: BoxConvention,
) -> std::result::Result<EpisodeRecord, String> {
    if raw.support_tensor_paths.is_empty() {
        return Err("support_tensor_paths must not be empty".into());
    }
    let [w, h] = raw.image_size;
    if w == 0 || h == 0 {
        return Err(format!("image_size must be positive, got [{w}, {h}]"));
    }
    let resolve = |p: &Path| -> std::result::Result<PathBuf, String> {
        let full = if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        };
        if full.is_file() {
            Ok(full)
        } else {
            Err(format!("missing file {}", full.display()))
        }
    };
    let query_tensor_path = resolve(&raw.query_tensor_path)?;
    let support_tensor_paths = raw
        .support_tensor_paths
        .iter()
        .map(|p| resolve(p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let query_image_path = raw.query_image_path.as_deref().map(resolve).transpose()?;

    let truth_box = match raw.truth_box {
        None => None,
        Some(b) => {
            let conv = raw.box_convention.unwrap_or(convention);
            let [x0, y0, mut x1, mut y1] = b;
            if conv == BoxConvention::Inclusive {
                x1 += 1;
                y1 += 1;
            }
            let to_u32 = |v: i64| {
                u32::try_from(v).map_err(|_| format!("truth_box coordinate {v} out of range"))
            };
            let bbox = BoundingBox::new(to_u32(x0)?, to_u32(y0)?, to_u32(x1)?, to_u32(y1)?)
                .map_err(|_| format!("truth_box {b:?} has nonpositive area"))?;
            if bbox.x_max() > w || bbox.y_max() > h {
                return Err(format!("truth_box {b:?} exceeds image_size [{w}, {h}]"));
            }
            Some(bbox)
        }
    };

    Ok(EpisodeRecord {
        episode_id: raw.episode_id,
        query_tensor_path,
        support_tensor_paths,
        query_image_path,
        truth_box,
        image_size: (w, h),
        metric: raw.metric,
    })
}

/// Write records as a versioned half-open manifest. Paths are stored as
/// given; pass paths relative to `path`'s directory for a relocatable file.
pub fn write_manifest(path: impl AsRef<Path>, records: &[EpisodeRecord]) -> Result<()> {
    let path = path.as_ref();
    let doc = OutManifest {
        schema_version: SCHEMA_VERSION,
        box_convention: BoxConvention::HalfOpen,
        episodes: records
            .iter()
            .map(|r| OutEpisode {
                episode_id: &r.episode_id,
                query_tensor_path: &r.query_tensor_path,
                support_tensor_paths: &r.support_tensor_paths,
                query_image_path: r.query_image_path.as_deref(),
                truth_box: r.truth_box,
                image_size: [r.image_size.0, r.image_size.1],
                metric: r.metric,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
