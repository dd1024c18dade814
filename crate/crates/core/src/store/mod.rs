//! File formats: `.npy` tensors, JSON episode manifests and PNG overlays.

pub mod manifest;
pub mod npy;
pub mod overlay;

pub use manifest::{read_manifest, write_manifest, BoxConvention, EpisodeRecord};
pub use npy::{read_features, read_map, read_tensor, write_tensor, Tensor};
pub use overlay::{render_overlay, DEFAULT_ALPHA};
