//! Heatmap rendering: a fixed jet colormap, alpha blending onto the source
//! image, and side-by-side strips.

use std::path::Path;
use std::sync::OnceLock;

use image::{GenericImage, Rgb, RgbImage};

use crate::map::ActivationMap;
use crate::{Error, Result, Scalar};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Breakpoints of the colormap: blue, cyan, yellow, red.
const STOPS: [(f64, [f64; 3]); 4] = [
    (0.0, [0.0, 0.0, 255.0]),
    (0.35, [0.0, 255.0, 255.0]),
    (0.66, [255.0, 255.0, 0.0]),
    (1.0, [255.0, 0.0, 0.0]),
];

/// The 256-entry lookup table.
pub fn jet_lut() -> &'static [[u8; 3]; 256] {
    static LUT: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [[0u8; 3]; 256];
        for (k, entry) in lut.iter_mut().enumerate() {
            let t = k as f64 / 255.0;
            let seg = STOPS
                .windows(2)
                .find(|w| t <= w[1].0)
                .unwrap_or(&STOPS[2..4]);
            let (t0, c0) = seg[0];
            let (t1, c1) = seg[1];
            let f = (t - t0) / (t1 - t0);
            for ch in 0..3 {
                entry[ch] = (c0[ch] + f * (c1[ch] - c0[ch])).round() as u8;
            }
        }
        lut
    })
}

/// Color for a normalized value; inputs outside `[0, 1]` are clamped.
pub fn jet(value: f64) -> [u8; 3] {
    let v = if value.is_nan() {
        0.0
    } else {
        value.clamp(0.0, 1.0)
    };
    jet_lut()[(v * 255.0).round() as usize]
}

/// Colorize a normalized map.
pub fn heatmap_image<T: Scalar>(map: &ActivationMap<T>) -> RgbImage {
    RgbImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        Rgb(jet(map.get(y as usize, x as usize).acc()))
    })
}

/// `alpha·heat + (1 − alpha)·image`, per channel, rounded.
pub fn blend<T: Scalar>(image: &RgbImage, map: &ActivationMap<T>, alpha: f64) -> Result<RgbImage> {
    if (image.width() as usize, image.height() as usize) != (map.width(), map.height()) {
        return Err(Error::Shape(format!(
            "image is {}x{} but map is {}x{} (width x height)",
            image.width(),
            image.height(),
            map.width(),
            map.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    Ok(RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let heat = jet(map.get(y as usize, x as usize).acc());
        let px = image.get_pixel(x, y).0;
        Rgb(std::array::from_fn(|c| {
            (alpha * f64::from(heat[c]) + (1.0 - alpha) * f64::from(px[c])).round() as u8
        }))
    }))
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn save_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Blend `map` onto the image at `image_path` and write a PNG to `out_path`.
pub fn render_overlay<T: Scalar>(
    image_path: impl AsRef<Path>,
    map: &ActivationMap<T>,
    out_path: impl AsRef<Path>,
    alpha: f64,
) -> Result<()> {
    let image = load_rgb(image_path)?;
    save_png(out_path, &blend(&image, map, alpha)?)
}

/// Panels laid left to right on a black canvas as tall as the tallest one.
pub fn strip(panels: &[RgbImage]) -> RgbImage {
    let width = panels.iter().map(RgbImage::width).sum::<u32>().max(1);
    let height = panels.iter().map(RgbImage::height).max().unwrap_or(1);
    let mut out = RgbImage::new(width, height);
    let mut x = 0;
    for p in panels {
        out.copy_from(p, x, 0).expect("panel fits by construction");
        x += p.width();
    }
    out
}
