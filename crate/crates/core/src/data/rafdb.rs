use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, LabeledImage, Split, IMAGE_SIZE};
use crate::error::{Error, Result};

/// RAF-DB basic labels (1 surprise, 2 fear, 3 disgust, 4 happiness,
/// 5 sadness, 6 anger, 7 neutral) mapped onto the FER-2013 class order.
const RAF_TO_FER: [usize; 7] = [5, 2, 1, 3, 4, 0, 6];

/// Loads the RAF-DB basic set: `label_file` lists `filename label` pairs,
/// images live in `root_dir` (the `_aligned` suffix is accepted). Split
/// comes from the `train_` / `test_` filename prefix. Images are resized to
/// 48x48 with bilinear interpolation and kept in RGB.
pub fn load_raf_db(root_dir: &Path, label_file: &Path) -> Result<Dataset> {
    let text =
        fs::read_to_string(label_file).map_err(|e| Error::io(format!("reading {}", label_file.display()), e))?;
    let mut images = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Data {
            path: label_file.to_path_buf(),
            line: i + 1,
            reason,
        };
        let mut parts = line.split_whitespace();
        let (Some(name), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(format!("expected `filename label`, got `{line}`")));
        };
        let raw: usize = label.parse().map_err(|_| err(format!("bad label `{label}`")))?;
        if !(1..=7).contains(&raw) {
            return Err(err(format!("label {raw} is not in 1..=7")));
        }
        let split = if name.starts_with("train") {
            Split::Train
        } else if name.starts_with("test") {
            Split::Test
        } else {
            return Err(err(format!("`{name}` has neither a train nor a test prefix")));
        };
        let path = resolve(root_dir, name).ok_or_else(|| Error::Image {
            path: root_dir.join(name),
            reason: "image file not found".into(),
        })?;
        let pixels = read_resized(&path)?;
        images.push(LabeledImage::new(pixels, 3, RAF_TO_FER[raw - 1], split)?);
    }
    Ok(Dataset::from_images(images))
}

fn resolve(root: &Path, name: &str) -> Option<PathBuf> {
    let direct = root.join(name);
    if direct.is_file() {
        return Some(direct);
    }
    let p = Path::new(name);
    let stem = p.file_stem()?.to_str()?;
    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("jpg");
    let aligned = root.join(format!("{stem}_aligned.{ext}"));
    aligned.is_file().then_some(aligned)
}

fn read_resized(path: &Path) -> Result<Vec<u8>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut planar = vec![0u8; 3 * (w * h) as usize];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            planar[c * (w * h) as usize + i] = px[c];
        }
    }
    Ok(resize_bilinear(&planar, 3, h as usize, w as usize, IMAGE_SIZE, IMAGE_SIZE))
}

/// Planar bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[u8], channels: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    let mut out = vec![0u8; channels * oh * ow];
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
            let y1 = (y0 + 1).min(h - 1);
            for x in 0..ow {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
                let x1 = (x0 + 1).min(w - 1);
                let p = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
                let v = (1.0 - ty) * ((1.0 - tx) * p(y0, x0) + tx * p(y0, x1)) + ty * ((1.0 - tx) * p(y1, x0) + tx * p(y1, x1));
                out[(c * oh + y) * ow + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}
