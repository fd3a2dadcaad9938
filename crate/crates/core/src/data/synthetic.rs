//! Labeled geometric patterns for license-free fixtures.
//!
//! Seven classes, one pattern family each: horizontal stripes, vertical
//! stripes, diagonal stripes (either direction), a dot lattice, a filled
//! disc, a ring, and a checkerboard. Every class is closed under horizontal
//! flips. Period, phase, position, contrast and noise vary per image.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageFormat};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, LabeledImage, Split, IMAGE_SIZE, NUM_CLASSES};
use crate::error::{Error, Result};

const LABEL_FILE: &str = "labels.txt";

fn pattern(class: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = IMAGE_SIZE;
    let period = rng.random_range(6.0..12.0f64);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let (cy, cx) = (rng.random_range(16.0..32.0f64), rng.random_range(16.0..32.0f64));
    let radius = rng.random_range(8.0..14.0f64);
    let lo = rng.random_range(20.0..90.0f64);
    let hi = rng.random_range(160.0..235.0f64);
    let noise = Normal::new(0.0, 18.0).unwrap();
    let k = std::f64::consts::TAU / period;
    let slope = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut px = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (fy, fx) = (y as f64, x as f64);
            let on = match class {
                0 => (k * fy + phase).sin() > 0.0,
                1 => (k * fx + phase).sin() > 0.0,
                2 => (k * (fx + slope * fy) / 2f64.sqrt() + phase).sin() > 0.0,
                3 => (k * fy + phase).sin() > 0.5 && (k * fx + phase).sin() > 0.5,
                4 => (fy - cy).hypot(fx - cx) < radius,
                5 => ((fy - cy).hypot(fx - cx) - radius).abs() < 2.5,
                _ => ((k * fy + phase).sin() > 0.0) ^ ((k * fx + phase).sin() > 0.0),
            };
            let v = if on { hi } else { lo } + noise.sample(rng);
            px.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    px
}

/// `per_class` images of every class, shuffled, all tagged `Train`.
pub fn generate(per_class: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * NUM_CLASSES);
    for _ in 0..per_class {
        for class in 0..NUM_CLASSES {
            let px = pattern(class, &mut rng);
            out.push(LabeledImage::new(px, 1, class, Split::Train).expect("generated image is canonical"));
        }
    }
    out.shuffle(&mut rng);
    out
}

/// Balanced train / val / test splits.
pub fn generate_dataset(train_per_class: usize, val_per_class: usize, test_per_class: usize, seed: u64) -> Dataset {
    let tag = |mut v: Vec<LabeledImage>, s: Split| {
        v.iter_mut().for_each(|i| i.split = s);
        v
    };
    Dataset {
        train: generate(train_per_class, seed),
        val: tag(generate(val_per_class, seed.wrapping_add(1)), Split::Val),
        test: tag(generate(test_per_class, seed.wrapping_add(2)), Split::Test),
    }
}

/// Writes `<split>_<index>.pgm` files plus a `labels.txt` listing.
pub fn write_fixture(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut listing = String::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        for (i, img) in dataset.split(split).iter().enumerate() {
            let name = format!("{}_{i:05}.pgm", split.name());
            let gray = GrayImage::from_raw(IMAGE_SIZE as u32, IMAGE_SIZE as u32, img.pixels[..IMAGE_SIZE * IMAGE_SIZE].to_vec())
                .expect("48x48 buffer");
            let path = dir.join(&name);
            gray.save_with_format(&path, ImageFormat::Pnm).map_err(|e| Error::Image {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            listing.push_str(&format!("{name} {}\n", img.label));
        }
    }
    let lf = dir.join(LABEL_FILE);
    fs::write(&lf, listing).map_err(|e| Error::io(format!("writing {}", lf.display()), e))
}

/// Reads a fixture written by [`write_fixture`].
pub fn load_synthetic(dir: &Path) -> Result<Dataset> {
    let lf = dir.join(LABEL_FILE);
    let text = fs::read_to_string(&lf).map_err(|e| Error::io(format!("reading {}", lf.display()), e))?;
    let mut images = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |reason: String| Error::Data {
            path: lf.clone(),
            line: i + 1,
            reason,
        };
        let mut parts = line.split_whitespace();
        let (Some(name), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(format!("expected `filename label`, got `{line}`")));
        };
        let label: usize = label.parse().map_err(|_| err(format!("bad label `{label}`")))?;
        let split = match name.split('_').next() {
            Some("train") => Split::Train,
            Some("val") => Split::Val,
            Some("test") => Split::Test,
            _ => return Err(err(format!("`{name}` lacks a split prefix"))),
        };
        let path = dir.join(name);
        let img = image::open(&path).map_err(|e| Error::Image {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let gray = img.to_luma8();
        if gray.dimensions() != (IMAGE_SIZE as u32, IMAGE_SIZE as u32) {
            return Err(Error::Image {
                path,
                reason: format!("{:?} is not 48x48", gray.dimensions()),
            });
        }
        images.push(LabeledImage::new(gray.into_raw(), 1, label, split).map_err(|e| err(e.to_string()))?);
    }
    Ok(Dataset::from_images(images))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let a = generate(5, 1);
        assert_eq!(a, generate(5, 1));
        assert_ne!(a, generate(5, 2));
        for c in 0..NUM_CLASSES {
            assert_eq!(a.iter().filter(|i| i.label == c).count(), 5);
        }
    }

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_dataset(2, 1, 1, 9);
        write_fixture(dir.path(), &d).unwrap();
        assert_eq!(load_synthetic(dir.path()).unwrap(), d);
    }
}
