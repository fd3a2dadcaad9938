use std::fs;
use std::path::Path;

use super::{Dataset, LabeledImage, Split, IMAGE_SIZE, NUM_CLASSES};
use crate::error::{Error, Result};

/// Loads the FER-2013 CSV (`emotion,pixels,Usage`) and splits it by `Usage`:
/// `Training`, `PublicTest` (validation) and `PrivateTest` (test).
pub fn load_fer2013(csv_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(csv_path).map_err(|e| Error::io(format!("reading {}", csv_path.display()), e))?;
    parse_fer2013(&text, csv_path)
}

pub fn parse_fer2013(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, reason: String| Error::Data {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| err(1, format!("header lacks `{name}` column")))
    };
    let (ci_label, ci_pixels, ci_usage) = (col("emotion")?, col("pixels")?, col("Usage")?);

    let mut out = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(err(lineno, format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        let label: usize = fields[ci_label]
            .parse()
            .map_err(|_| err(lineno, format!("bad emotion `{}`", fields[ci_label])))?;
        if label >= NUM_CLASSES {
            return Err(err(lineno, format!("emotion {label} is not in 0..{NUM_CLASSES}")));
        }
        let pixels = fields[ci_pixels]
            .split_ascii_whitespace()
            .map(|p| p.parse::<u8>())
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|_| err(lineno, "pixel value is not a byte".into()))?;
        if pixels.len() != IMAGE_SIZE * IMAGE_SIZE {
            return Err(err(
                lineno,
                format!("{} pixels, expected {}", pixels.len(), IMAGE_SIZE * IMAGE_SIZE),
            ));
        }
        let split = match fields[ci_usage] {
            "Training" => Split::Train,
            "PublicTest" => Split::Val,
            "PrivateTest" => Split::Test,
            other => return Err(err(lineno, format!("unknown Usage `{other}`"))),
        };
        out.push(LabeledImage::new(pixels, 1, label, split)?);
    }
    Ok(Dataset::from_images(out))
}
