use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Weight layout `(out, features, 1, 1)`.
pub fn linear_weight_shape(features: usize, out: usize) -> Shape {
    Shape::new(out, features, 1, 1)
}

/// `y = x W^T + b` where `x` is flattened to `(n, features)`. Output is `(n, out, 1, 1)`.
pub fn linear<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (n, f) = (x.shape().n, x.shape().item());
    let (out, wf) = (weight.shape().n, weight.shape().item());
    if f != wf || bias.len() != out {
        return Err(Error::shape(format!(
            "linear: input {} against weight {} and bias {}",
            x.shape(),
            weight.shape(),
            bias.len()
        )));
    }
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    T::gemm(
        n,
        f,
        out,
        x.data(),
        (f as isize, 1),
        weight.data(),
        (1, f as isize),
        T::one(),
        &mut y,
        (out as isize, 1),
    );
    Tensor::from_vec(Shape::new(n, out, 1, 1), y)
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, f) = (x.shape().n, x.shape().item());
    let out = weight.shape().n;
    if grad_out.shape().numel() != n * out || weight.shape().item() != f {
        return Err(Error::shape("linear backward: shape mismatch"));
    }
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); n * f];
    T::gemm(
        n,
        out,
        f,
        dy,
        (out as isize, 1),
        weight.data(),
        (f as isize, 1),
        T::zero(),
        &mut dx,
        (f as isize, 1),
    );
    let mut dw = vec![T::zero(); out * f];
    T::gemm(
        out,
        n,
        f,
        dy,
        (1, out as isize),
        x.data(),
        (f as isize, 1),
        T::zero(),
        &mut dw,
        (f as isize, 1),
    );
    let mut db = vec![T::zero(); out];
    for row in dy.chunks(out) {
        for (b, g) in db.iter_mut().zip(row) {
            *b = *b + *g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(x.shape(), dx)?,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias: db,
    })
}
