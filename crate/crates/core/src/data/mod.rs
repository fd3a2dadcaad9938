//! Datasets, normalization, augmentation and the ten-crop evaluation transform.

mod fer2013;
mod rafdb;
pub mod synthetic;
mod transform;

pub use fer2013::{load_fer2013, parse_fer2013};
pub use rafdb::{load_raf_db, resize_bilinear};
pub use transform::{
    crop_into, make_batch, predict_ten_crop, ten_crop_probabilities, to_model_input, InputMode, TenCropPrediction,
    CROP, TEN_CROP_OFFSETS,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Canonical image side after loading.
pub const IMAGE_SIZE: usize = 48;
pub const NUM_CLASSES: usize = 7;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["anger", "disgust", "fear", "happiness", "sadness", "surprise", "neutral"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A canonical 48x48 image, planar channel layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    /// `channels * 48 * 48` bytes.
    pub pixels: Vec<u8>,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    pub label: usize,
    pub split: Split,
}

impl LabeledImage {
    pub fn new(pixels: Vec<u8>, channels: usize, label: usize, split: Split) -> Result<Self> {
        if label >= NUM_CLASSES {
            return Err(Error::Label {
                label,
                classes: NUM_CLASSES,
            });
        }
        if !(channels == 1 || channels == 3) || pixels.len() != channels * IMAGE_SIZE * IMAGE_SIZE {
            return Err(Error::shape(format!(
                "image of {} bytes with {channels} channels is not 48x48",
                pixels.len()
            )));
        }
        Ok(LabeledImage {
            pixels,
            channels,
            label,
            split,
        })
    }

    /// Pixel of model channel `c` (grayscale replicates).
    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> u8 {
        let c = if self.channels == 1 { 0 } else { c };
        self.pixels[(c * IMAGE_SIZE + y) * IMAGE_SIZE + x]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

impl Dataset {
    pub fn from_images(images: Vec<LabeledImage>) -> Self {
        let mut d = Dataset::default();
        for img in images {
            match img.split {
                Split::Train => d.train.push(img),
                Split::Val => d.val.push(img),
                Split::Test => d.test.push(img),
            }
        }
        d
    }

    pub fn split(&self, s: Split) -> &[LabeledImage] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Validation split, falling back to test when the dataset has none (RAF-DB).
    pub fn validation(&self) -> &[LabeledImage] {
        if self.val.is_empty() {
            &self.test
        } else {
            &self.val
        }
    }
}

/// Picks `per_class` images of every class (seeded), preserving nothing of the input order.
pub fn balanced_subset(images: &[LabeledImage], per_class: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        let mut pool: Vec<&LabeledImage> = images.iter().filter(|i| i.label == class).collect();
        pool.shuffle(&mut rng);
        out.extend(pool.into_iter().take(per_class).cloned());
    }
    out.shuffle(&mut rng);
    out
}

/// Per-channel standardization constants, computed over a training split
/// after scaling bytes to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

impl Normalization {
    pub fn from_images(images: &[LabeledImage]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("cannot compute normalization over an empty split".into()));
        }
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let plane = (IMAGE_SIZE * IMAGE_SIZE) as f64;
        for img in images {
            for c in 0..3 {
                let cc = if img.channels == 1 { 0 } else { c };
                for &p in &img.pixels[cc * IMAGE_SIZE * IMAGE_SIZE..(cc + 1) * IMAGE_SIZE * IMAGE_SIZE] {
                    let v = p as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let count = images.len() as f64 * plane;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            mean[c] = sum[c] / count;
            let var = (sq[c] / count - mean[c] * mean[c]).max(0.0);
            // a constant training split would make the map degenerate
            std[c] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
        Ok(Normalization { mean, std })
    }

    #[inline]
    pub fn apply(&self, c: usize, byte: u8) -> f64 {
        (byte as f64 / 255.0 - self.mean[c]) / self.std[c]
    }

    /// Inverse of [`Self::apply`] before rounding.
    pub fn invert(&self, c: usize, value: f64) -> f64 {
        (value * self.std[c] + self.mean[c]) * 255.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().all(|s| s.is_finite() && *s > 0.0) && self.mean.iter().all(|m| m.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid normalization {self:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_validation() {
        assert!(LabeledImage::new(vec![0; 2304], 1, 6, Split::Train).is_ok());
        assert!(LabeledImage::new(vec![0; 2304], 1, 7, Split::Train).is_err());
        assert!(LabeledImage::new(vec![0; 2303], 1, 0, Split::Train).is_err());
        assert!(LabeledImage::new(vec![0; 3 * 2304], 3, 0, Split::Train).is_ok());
    }

    #[test]
    fn normalization_is_a_bijection() {
        let imgs = synthetic::generate(3, 11);
        let norm = Normalization::from_images(&imgs).unwrap();
        norm.validate().unwrap();
        for b in 0..=255u8 {
            assert_eq!(norm.invert(0, norm.apply(0, b)).round() as u8, b);
        }
        let flat = vec![LabeledImage::new(vec![7; 2304], 1, 0, Split::Train).unwrap()];
        assert_eq!(Normalization::from_images(&flat).unwrap().std, [1.0; 3]);
    }

    #[test]
    fn balanced_subset_is_balanced() {
        let imgs = synthetic::generate(10, 3);
        let sub = balanced_subset(&imgs, 4, 1);
        assert_eq!(sub.len(), 28);
        for c in 0..NUM_CLASSES {
            assert_eq!(sub.iter().filter(|i| i.label == c).count(), 4);
        }
    }
}
