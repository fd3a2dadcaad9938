use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Row-wise max-subtracted softmax over `(n, k, 1, 1)` logits.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.shape().item();
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z = z + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / z);
    }
    probs
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`).
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, k) = (logits.shape().n, logits.shape().item());
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label { label: bad, classes: k });
    }
    logits.ensure_finite("logits")?;
    let mut loss = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss = loss + (lse - row[label]);
    }
    Ok((loss / T::from_usize(n).unwrap(), softmax(logits)))
}

/// `(probs - onehot) / n`.
pub fn softmax_cross_entropy_backward<T: Element>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = (probs.shape().n, probs.shape().item());
    if labels.len() != n {
        return Err(Error::shape("softmax backward: label count"));
    }
    let scale = T::one() / T::from_usize(n).unwrap();
    let mut g = probs.clone();
    for (row, &label) in g.data_mut().chunks_mut(k).zip(labels) {
        if label >= k {
            return Err(Error::Label { label, classes: k });
        }
        row[label] = row[label] - T::one();
        row.iter_mut().for_each(|v| *v = *v * scale);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::full(Shape::new(2, 7, 1, 1), 0.3f64);
        let (loss, probs) = softmax_cross_entropy(&logits, &[0, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!((loss - 1.9459).abs() < 1e-4);
        assert!(probs.data().iter().all(|p| (p - 1.0 / 7.0).abs() < 1e-12));
    }

    #[test]
    fn saturated_true_class() {
        let mut logits = Tensor::zeros(Shape::new(1, 7, 1, 1));
        logits.data_mut()[3] = 1000.0f32;
        let (loss, _) = softmax_cross_entropy(&logits, &[3]).unwrap();
        assert!(loss < 1e-6 && loss >= 0.0);
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let logits: Tensor<f64> = Tensor::from_fn(Shape::new(3, 7, 1, 1), |_, _, _, _| rng.random_range(-3.0..3.0));
        let labels = [1, 4, 6];
        let (loss, probs) = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut expect = 0.0f64;
        for (r, &l) in labels.iter().enumerate() {
            let row = &logits.data()[r * 7..(r + 1) * 7];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for c in 0..7 {
                assert!((probs.data()[r * 7 + c] - row[c].exp() / z).abs() < 1e-12);
            }
            expect -= (row[l].exp() / z).ln();
        }
        assert!((loss - expect / 3.0).abs() < 1e-12);
        for row in probs.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros(Shape::new(1, 7, 1, 1));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[7]),
            Err(Error::Label { label: 7, classes: 7 })
        ));
    }
}
