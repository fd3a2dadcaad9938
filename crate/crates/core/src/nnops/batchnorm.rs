use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};
use crate::Mode;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch-norm parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    /// `(1, c, 1, 1)` scale.
    pub gamma: Tensor<T>,
    /// `(1, c, 1, 1)` shift.
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        BatchNormState {
            gamma: Tensor::full(shape, T::one()),
            beta: Tensor::zeros(shape),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.gamma.shape().numel() != c || self.beta.shape().numel() != c || self.running_var.len() != c {
            return Err(Error::shape("batch-norm vectors disagree on channel count"));
        }
        if let Some(v) = self.running_var.iter().find(|v| **v < T::zero() || !v.is_finite()) {
            return Err(Error::Format(format!("batch-norm running variance {v} is invalid")));
        }
        if !(self.eps > 0.0) || !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config("batch-norm eps/momentum out of range".into()));
        }
        Ok(())
    }
}

/// Saved normalized activations for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Shape,
}

/// Train mode normalizes with biased batch statistics and folds them into the
/// running estimates; infer mode uses the running estimates.
pub fn batchnorm<T: Element>(
    x: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    match mode {
        Mode::Infer => Ok((batchnorm_infer(x, state)?, None)),
        Mode::Train => {
            let (y, cache) = batchnorm_train(x, state)?;
            Ok((y, Some(cache)))
        }
    }
}

pub fn batchnorm_infer<T: Element>(x: &Tensor<T>, state: &BatchNormState<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    check_channels(s, state)?;
    let eps = T::from_f64_lossy(state.eps);
    let plane = s.plane();
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let c = i % s.c;
        let scale = state.gamma.data()[c] / (state.running_var[c] + eps).sqrt();
        let shift = state.beta.data()[c] - state.running_mean[c] * scale;
        chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok(out)
}

pub fn batchnorm_train<T: Element>(
    x: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let s = x.shape();
    check_channels(s, state)?;
    if s.n < 2 {
        return Err(Error::shape("batch norm in train mode needs a batch of at least 2"));
    }
    let plane = s.plane();
    let count = T::from_usize(s.n * plane).unwrap();
    let eps = T::from_f64_lossy(state.eps);
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for (i, chunk) in x.data().chunks(plane).enumerate() {
        mean[i % s.c] = mean[i % s.c] + chunk.iter().copied().sum();
    }
    mean.iter_mut().for_each(|m| *m = *m / count);
    for (i, chunk) in x.data().chunks(plane).enumerate() {
        let c = i % s.c;
        var[c] = var[c] + chunk.iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum();
    }
    var.iter_mut().for_each(|v| *v = *v / count);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = x.data().to_vec();
    let mut out = x.clone();
    for (i, (xh, o)) in xhat.chunks_mut(plane).zip(out.data_mut().chunks_mut(plane)).enumerate() {
        let c = i % s.c;
        let (g, b) = (state.gamma.data()[c], state.beta.data()[c]);
        for (h, y) in xh.iter_mut().zip(o.iter_mut()) {
            *h = (*h - mean[c]) * inv_std[c];
            *y = *h * g + b;
        }
    }

    let m = T::from_f64_lossy(state.momentum);
    let total = s.n * plane;
    let unbias = if total > 1 {
        T::from_usize(total).unwrap() / T::from_usize(total - 1).unwrap()
    } else {
        T::one()
    };
    for c in 0..s.c {
        state.running_mean[c] = (T::one() - m) * state.running_mean[c] + m * mean[c];
        state.running_var[c] = (T::one() - m) * state.running_var[c] + m * var[c] * unbias;
    }
    Ok((out, BnCache { xhat, inv_std, shape: s }))
}

#[derive(Clone, Debug)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batchnorm_backward<T: Element>(
    grad_out: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> Result<BnGrads<T>> {
    let s = cache.shape;
    if grad_out.shape() != s {
        return Err(Error::shape("batch-norm backward: grad_out shape"));
    }
    let plane = s.plane();
    let count = T::from_usize(s.n * plane).unwrap();
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for (i, (g, xh)) in grad_out.data().chunks(plane).zip(cache.xhat.chunks(plane)).enumerate() {
        let c = i % s.c;
        dbeta[c] = dbeta[c] + g.iter().copied().sum();
        dgamma[c] = dgamma[c] + g.iter().zip(xh).map(|(a, b)| *a * *b).sum();
    }
    let mut dx = grad_out.clone();
    for (i, (d, xh)) in dx.data_mut().chunks_mut(plane).zip(cache.xhat.chunks(plane)).enumerate() {
        let c = i % s.c;
        let k = gamma[c] * cache.inv_std[c] / count;
        for (v, h) in d.iter_mut().zip(xh) {
            *v = k * (count * *v - dbeta[c] - *h * dgamma[c]);
        }
    }
    Ok(BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}

fn check_channels<T: Element>(s: Shape, state: &BatchNormState<T>) -> Result<()> {
    if s.c != state.channels() {
        return Err(Error::shape(format!(
            "batch norm over {} channels applied to {s}",
            state.channels()
        )));
    }
    Ok(())
}
