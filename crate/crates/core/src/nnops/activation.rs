use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Element>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::shape("relu backward: shape mismatch"));
    }
    let mut dx = grad_out.clone();
    for (d, x) in dx.data_mut().iter_mut().zip(input.data()) {
        if *x <= T::zero() {
            *d = T::zero();
        }
    }
    Ok(dx)
}
