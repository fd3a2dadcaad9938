use rand::Rng;

use super::{LabeledImage, Normalization, IMAGE_SIZE, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nnops::softmax;
use crate::tensor::{Element, Shape, Tensor};

/// Crop side fed to the network.
pub const CROP: usize = 44;

/// Four corners and the center of a 48x48 frame; each is used with and without a flip.
pub const TEN_CROP_OFFSETS: [(usize, usize); 5] = [(0, 0), (0, 4), (4, 0), (4, 4), (2, 2)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    /// One random crop with a random horizontal flip.
    Train,
    /// Ten crops: the fixed corner/center set, or ten random crops.
    TenCrop { random: bool },
    /// The single unflipped center crop.
    Center,
}

/// Writes one normalized `3 x 44 x 44` crop starting at `(oy, ox)`.
pub fn crop_into<T: Element>(img: &LabeledImage, oy: usize, ox: usize, flip: bool, norm: &Normalization, out: &mut [T]) {
    debug_assert!(oy + CROP <= IMAGE_SIZE && ox + CROP <= IMAGE_SIZE);
    debug_assert_eq!(out.len(), 3 * CROP * CROP);
    for c in 0..3 {
        for y in 0..CROP {
            for x in 0..CROP {
                let sx = if flip { ox + CROP - 1 - x } else { ox + x };
                out[(c * CROP + y) * CROP + x] = T::from_f64_lossy(norm.apply(c, img.at(c, oy + y, sx)));
            }
        }
    }
}

fn check(img: &LabeledImage) -> Result<()> {
    if img.pixels.len() != img.channels * IMAGE_SIZE * IMAGE_SIZE {
        return Err(Error::shape(format!("image of {} bytes is not 48x48", img.pixels.len())));
    }
    Ok(())
}

/// Model-ready crops `(k, 3, 44, 44)`: `k = 1` for train and center modes, 10 for ten-crop.
pub fn to_model_input<T: Element, R: Rng + ?Sized>(
    img: &LabeledImage,
    mode: InputMode,
    norm: &Normalization,
    rng: &mut R,
) -> Result<Tensor<T>> {
    check(img)?;
    let slack = IMAGE_SIZE - CROP;
    let crops: Vec<(usize, usize, bool)> = match mode {
        InputMode::Train => vec![(rng.random_range(0..=slack), rng.random_range(0..=slack), rng.random_bool(0.5))],
        InputMode::Center => vec![(slack / 2, slack / 2, false)],
        InputMode::TenCrop { random: false } => [false, true]
            .iter()
            .flat_map(|&f| TEN_CROP_OFFSETS.iter().map(move |&(y, x)| (y, x, f)))
            .collect(),
        InputMode::TenCrop { random: true } => (0..10)
            .map(|_| (rng.random_range(0..=slack), rng.random_range(0..=slack), rng.random_bool(0.5)))
            .collect(),
    };
    let item = 3 * CROP * CROP;
    let mut data = vec![T::zero(); crops.len() * item];
    for (chunk, &(oy, ox, flip)) in data.chunks_mut(item).zip(&crops) {
        crop_into(img, oy, ox, flip, norm, chunk);
    }
    Tensor::from_vec(Shape::new(crops.len(), 3, CROP, CROP), data)
}

/// Stacks one crop per image into a batch.
pub fn make_batch<T: Element, R: Rng + ?Sized>(
    images: &[&LabeledImage],
    mode: InputMode,
    norm: &Normalization,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if matches!(mode, InputMode::TenCrop { .. }) {
        return Err(Error::Config("batches hold one crop per image".into()));
    }
    let item = 3 * CROP * CROP;
    let mut data = Vec::with_capacity(images.len() * item);
    for img in images {
        data.extend_from_slice(to_model_input::<T, R>(img, mode, norm, rng)?.data());
    }
    let labels = images.iter().map(|i| i.label).collect();
    Ok((Tensor::from_vec(Shape::new(images.len(), 3, CROP, CROP), data)?, labels))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TenCropPrediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// Softmax probabilities averaged over the crops.
pub fn ten_crop_probabilities<T: Element>(model: &Model<T>, crops: &Tensor<T>) -> Result<Vec<f64>> {
    let probs = softmax(&model.predict(crops)?);
    let k = probs.shape().item();
    let mut avg = vec![0f64; k];
    for row in probs.data().chunks(k) {
        for (a, p) in avg.iter_mut().zip(row) {
            *a += p.to_f64_lossy();
        }
    }
    let n = crops.shape().n as f64;
    avg.iter_mut().for_each(|a| *a /= n);
    Ok(avg)
}

/// Ten-crop classification; ties go to the lowest class index.
pub fn predict_ten_crop<T: Element, R: Rng + ?Sized>(
    model: &Model<T>,
    img: &LabeledImage,
    norm: &Normalization,
    random_crops: bool,
    rng: &mut R,
) -> Result<TenCropPrediction> {
    let crops = to_model_input(img, InputMode::TenCrop { random: random_crops }, norm, rng)?;
    let probabilities = ten_crop_probabilities(model, &crops)?;
    debug_assert_eq!(probabilities.len(), model.config.num_classes.min(NUM_CLASSES.max(model.config.num_classes)));
    Ok(TenCropPrediction {
        class: argmax(&probabilities),
        probabilities,
    })
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic, Split};
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> LabeledImage {
        let px = (0..48 * 48).map(|i| ((i / 48) * 2 + (i % 48)) as u8).collect();
        LabeledImage::new(px, 1, 0, Split::Test).unwrap()
    }

    const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0 / 255.0; 3],
    };

    #[test]
    fn ten_crops_shape_and_constant_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = LabeledImage::new(vec![90; 2304], 1, 2, Split::Test).unwrap();
        let t: Tensor<f32> = to_model_input(&img, InputMode::TenCrop { random: false }, &Normalization::default(), &mut rng).unwrap();
        assert_eq!(t.shape(), Shape::new(10, 3, 44, 44));
        for n in 1..10 {
            assert_eq!(t.item(n), t.item(0));
        }
    }

    #[test]
    fn center_crop_is_ramp_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = ramp();
        let t: Tensor<f64> = to_model_input(&img, InputMode::Center, &IDENTITY, &mut rng).unwrap();
        for c in 0..3 {
            for y in 0..44 {
                for x in 0..44 {
                    let expect = img.pixels[(y + 2) * 48 + (x + 2)] as f64;
                    assert!((t.at(0, c, y, x) - expect).abs() < 1e-9);
                }
            }
        }
        // the fifth deterministic crop is the same center window
        let ten: Tensor<f64> = to_model_input(&img, InputMode::TenCrop { random: false }, &IDENTITY, &mut rng).unwrap();
        assert_eq!(ten.item(4), t.item(0));
        // and its flipped twin mirrors columns
        for x in 0..44 {
            assert_eq!(ten.at(9, 0, 5, x), t.at(0, 0, 5, 43 - x));
        }
    }

    #[test]
    fn offsets_stay_inside_frame() {
        for &(y, x) in &TEN_CROP_OFFSETS {
            assert!(y + CROP <= IMAGE_SIZE && x + CROP <= IMAGE_SIZE);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = ramp();
        for _ in 0..50 {
            let t: Tensor<f32> = to_model_input(&img, InputMode::Train, &IDENTITY, &mut rng).unwrap();
            assert_eq!(t.shape(), Shape::new(1, 3, 44, 44));
        }
    }

    #[test]
    fn constant_logits_pick_class_zero() {
        let mut m = Model::<f64>::build(&ModelConfig::default(), 0).unwrap();
        m.classifier_weight = Tensor::zeros(m.classifier_weight.shape());
        let img = &synthetic::generate(1, 4)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = predict_ten_crop(&m, img, &Normalization::default(), false, &mut rng).unwrap();
        assert_eq!(p.class, 0);
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    }

    #[test]
    fn constant_image_average_equals_single_crop() {
        let m = Model::<f64>::build(&ModelConfig::default(), 1).unwrap();
        let img = LabeledImage::new(vec![120; 2304], 1, 0, Split::Test).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let norm = Normalization::default();
        let p = predict_ten_crop(&m, &img, &norm, false, &mut rng).unwrap();
        let single = to_model_input::<f64, _>(&img, InputMode::Center, &norm, &mut rng).unwrap();
        let sp = softmax(&m.predict(&single).unwrap());
        for (a, b) in p.probabilities.iter().zip(sp.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
