use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParamMut;
use crate::tensor::Element;

/// Momentum SGD with decoupled per-parameter buffers keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_all: bool,
    buffers: BTreeMap<String, Vec<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64, decay_all: bool) -> Self {
        Sgd {
            momentum,
            weight_decay,
            decay_all,
            buffers: BTreeMap::new(),
        }
    }

    pub fn buffers(&self) -> &BTreeMap<String, Vec<T>> {
        &self.buffers
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, v: Vec<T>) {
        self.buffers.insert(name.into(), v);
    }

    /// One update over every parameter. Masked entries are pinned to zero
    /// (parameter and velocity). Returns the number of entries updated.
    pub fn step(&mut self, params: Vec<ParamMut<'_, T>>, lr: f64) -> Result<usize> {
        let lr = T::from_f64_lossy(lr);
        let mu = T::from_f64_lossy(self.momentum);
        let mut updated = 0;
        for p in params {
            let n = p.tensor.data().len();
            if let Some(m) = &p.mask {
                if m.len() != n {
                    return Err(Error::shape(format!("mask of {} entries for `{}`", m.len(), p.name)));
                }
            }
            let wd = if p.decay || self.decay_all { T::from_f64_lossy(self.weight_decay) } else { T::zero() };
            let grad = p.tensor.grad().map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); n]);
            if grad.len() != n {
                return Err(Error::shape(format!("gradient length for `{}`", p.name)));
            }
            let v = self.buffers.entry(p.name.clone()).or_insert_with(|| vec![T::zero(); n]);
            if v.len() != n {
                return Err(Error::shape(format!("momentum buffer of {} entries for `{}` ({n})", v.len(), p.name)));
            }
            let w = p.tensor.data_mut();
            for i in 0..n {
                if p.mask.as_ref().is_some_and(|m| m[i] == T::zero()) {
                    w[i] = T::zero();
                    v[i] = T::zero();
                    continue;
                }
                let g = grad[i] + wd * w[i];
                v[i] = mu * v[i] + g;
                w[i] = w[i] - lr * v[i];
                updated += 1;
            }
        }
        Ok(updated)
    }
}
