//! Seeded weight initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::tensor::{Element, Shape, Tensor};

/// He-normal: `N(0, 2 / fan_in)`.
pub fn he_normal<T: Element, R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64_lossy(dist.sample(rng)))
}

/// He-uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform<T: Element, R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64_lossy(dist.sample(rng)))
}
