use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{make_batch, predict_ten_crop, InputMode, LabeledImage, Normalization, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropPolicy {
    /// Corner and center crops, each with its mirror image.
    TenCrop,
    /// Ten random crops per image, drawn from a per-image stream of `seed`.
    RandomTenCrop { seed: u64 },
    /// One center crop per image.
    Center,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    fn from_predictions(labels: &[usize], predicted: &[usize], classes: usize) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        for (&t, &p) in labels.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let correct = (0..classes).map(|i| confusion[i][i]).sum();
        let total = labels.len();
        Evaluation {
            correct,
            total,
            accuracy: correct as f64 / total as f64,
            confusion,
        }
    }

    pub fn render_text(&self) -> String {
        let classes = self.confusion.len();
        let name = |i: usize| CLASS_NAMES.get(i).copied().unwrap_or("?");
        let mut s = format!("accuracy {:.4} ({}/{})\n\nconfusion (rows true, columns predicted)\n", self.accuracy, self.correct, self.total);
        let _ = write!(s, "{:>10}", "");
        for j in 0..classes {
            let _ = write!(s, "{:>9}", name(j));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{:>10}", name(i));
            for v in row {
                let _ = write!(s, "{v:>9}");
            }
            s.push('\n');
        }
        s
    }

    pub fn render_json(&self) -> String {
        let rows: Vec<String> = self
            .confusion
            .iter()
            .map(|r| format!("[{}]", r.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")))
            .collect();
        format!(
            "{{\n  \"accuracy\": {},\n  \"correct\": {},\n  \"total\": {},\n  \"confusion\": [{}]\n}}\n",
            self.accuracy,
            self.correct,
            self.total,
            rows.join(", ")
        )
    }
}

const CENTER_CHUNK: usize = 64;

/// Class predictions for `images` under `policy`.
pub fn predict<T: Element>(model: &Model<T>, images: &[LabeledImage], norm: &Normalization, policy: CropPolicy) -> Result<Vec<usize>> {
    match policy {
        CropPolicy::Center => {
            let chunks: Vec<Vec<usize>> = images
                .par_chunks(CENTER_CHUNK)
                .map(|chunk| {
                    let refs: Vec<&LabeledImage> = chunk.iter().collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let (x, _) = make_batch::<T, _>(&refs, InputMode::Center, norm, &mut rng)?;
                    let logits = model.predict(&x)?;
                    let k = logits.shape().item();
                    Ok(logits.data().chunks(k).map(argmax).collect())
                })
                .collect::<Result<_>>()?;
            Ok(chunks.concat())
        }
        CropPolicy::TenCrop | CropPolicy::RandomTenCrop { .. } => images
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let (random, seed) = match policy {
                    CropPolicy::RandomTenCrop { seed } => (true, seed),
                    _ => (false, 0),
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                Ok(predict_ten_crop(model, img, norm, random, &mut rng)?.class)
            })
            .collect(),
    }
}

/// Accuracy and confusion matrix over `images`.
pub fn evaluate<T: Element>(model: &Model<T>, images: &[LabeledImage], norm: &Normalization, policy: CropPolicy) -> Result<Evaluation> {
    if images.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let classes = model.config.num_classes;
    let labels: Vec<usize> = images.iter().map(|i| i.label).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label: bad, classes });
    }
    let predicted = predict(model, images, norm, policy)?;
    Ok(Evaluation::from_predictions(&labels, &predicted, classes))
}

fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
