use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::load_rgb;
use crate::nn::{normal_init, Mat};

/// Turns an image into a fixed-length sequence of continuous token embeddings.
pub trait ImageTokenizer: Send + Sync {
    /// Number of tokens per image.
    fn sequence_len(&self) -> usize;
    fn token_dim(&self) -> usize;
    fn tokens(&self, image: &RgbImage) -> Mat;
}

/// Splits the image into a `grid × grid` set of patches; each patch's
/// per-channel mean and standard deviation are projected by a fixed random
/// matrix to `dim` values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchTokenizer {
    grid: u32,
    dim: usize,
    seed: u64,
    #[serde(skip)]
    projection: Option<Mat>,
}

const PATCH_PX: u32 = 4;
const PATCH_STATS: usize = 7;

impl PatchTokenizer {
    pub fn new(grid: u32, dim: usize, seed: u64) -> Self {
        assert!(grid > 0 && dim > 0);
        let mut t = Self {
            grid,
            dim,
            seed,
            projection: None,
        };
        t.projection = Some(t.build_projection());
        t
    }

    fn build_projection(&self) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        normal_init(PATCH_STATS, self.dim, 1.0 / (PATCH_STATS as f64).sqrt(), &mut rng)
    }

    fn projection(&self) -> std::borrow::Cow<'_, Mat> {
        match &self.projection {
            Some(p) => std::borrow::Cow::Borrowed(p),
            None => std::borrow::Cow::Owned(self.build_projection()),
        }
    }
}

impl Default for PatchTokenizer {
    fn default() -> Self {
        Self::new(4, 16, 0x1a6e)
    }
}

impl ImageTokenizer for PatchTokenizer {
    fn sequence_len(&self) -> usize {
        (self.grid * self.grid) as usize
    }

    fn token_dim(&self) -> usize {
        self.dim
    }

    fn tokens(&self, image: &RgbImage) -> Mat {
        let side = self.grid * PATCH_PX;
        let small = imageops::resize(image, side, side, FilterType::Triangle);
        let mut stats = Array2::<f64>::zeros((self.sequence_len(), PATCH_STATS));
        for gy in 0..self.grid {
            for gx in 0..self.grid {
                let row = (gy * self.grid + gx) as usize;
                let mut sum = [0.0f64; 3];
                let mut sq = [0.0f64; 3];
                for y in 0..PATCH_PX {
                    for x in 0..PATCH_PX {
                        let p = small.get_pixel(gx * PATCH_PX + x, gy * PATCH_PX + y).0;
                        for c in 0..3 {
                            let v = f64::from(p[c]) / 255.0;
                            sum[c] += v;
                            sq[c] += v * v;
                        }
                    }
                }
                let n = f64::from(PATCH_PX * PATCH_PX);
                for c in 0..3 {
                    let mean = sum[c] / n;
                    stats[[row, c]] = mean;
                    stats[[row, 3 + c]] = (sq[c] / n - mean * mean).max(0.0).sqrt();
                }
                stats[[row, 6]] = 1.0;
            }
        }
        stats.dot(&*self.projection())
    }
}

/// Image token sequence for infilling. `missing` is set when the image file
/// does not exist, in which case `tokens` has zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTokens {
    pub tokens: Mat,
    pub missing: bool,
}

impl ImageTokens {
    pub fn empty(dim: usize) -> Self {
        Self {
            tokens: Mat::zeros((0, dim)),
            missing: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }
}

/// Encodes the image at `image_ref`. A missing file degrades to an empty,
/// flagged sequence; a file that exists but cannot be read is an error.
pub fn encode_image_tokens(
    image_ref: impl AsRef<Path>,
    tokenizer: &dyn ImageTokenizer,
) -> Result<ImageTokens> {
    let path = image_ref.as_ref();
    match load_rgb(path) {
        Ok(img) => Ok(ImageTokens {
            tokens: tokenizer.tokens(&img),
            missing: false,
        }),
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
            log::warn!("image {} not found; infilling from text only", path.display());
            Ok(ImageTokens::empty(tokenizer.token_dim()))
        }
        Err(e) => Err(e),
    }
}
