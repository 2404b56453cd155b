//! Image loading and fixed, deterministic pixel featurization.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;

use crate::error::{Error, Result};

/// Side length of the downsampled grid used by [`pixel_features`].
pub const FEATURE_GRID: u32 = 8;
/// Length of [`pixel_features`] output.
pub const FEATURE_DIM: usize = (FEATURE_GRID * FEATURE_GRID * 3) as usize;

/// Loads an image as 8-bit RGB. A missing file is an `Io` error of kind
/// `NotFound`; an undecodable one is an `Image` error.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Downsamples to an 8×8 grid and returns RGB values scaled to `[-1, 1]`,
/// row-major.
pub fn pixel_features(img: &RgbImage) -> Vec<f64> {
    let small = imageops::resize(img, FEATURE_GRID, FEATURE_GRID, FilterType::Triangle);
    small
        .pixels()
        .flat_map(|p| p.0)
        .map(|v| f64::from(v) / 127.5 - 1.0)
        .collect()
}

pub fn features_from_path(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    Ok(pixel_features(&load_rgb(path)?))
}
