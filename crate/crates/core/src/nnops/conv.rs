//! 2-D convolution (cross-correlation, zero padding, optional groups).
//!
//! Two implementations share one contract: [`conv2d`] lowers each batch item
//! to a patch matrix and runs a GEMM per group, [`reference`] is the plain
//! nested-loop form that serves as its oracle.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// 3x3, stride 1, pad 1, bias on: the only convolution the EdgeCNN family uses.
    pub fn same3x3(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (3, 3),
            stride: 1,
            pad: 1,
            groups: 1,
            bias: true,
        }
    }

    pub fn with_groups(self, groups: usize) -> Self {
        ConvSpec { groups, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec {
            in_channels,
            out_channels,
            groups,
            ..
        } = *self;
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::shape(format!(
                "groups {groups} must divide in_channels {in_channels} and out_channels {out_channels}"
            )));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 {
            return Err(Error::shape("kernel and stride must be positive"));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_per_group(),
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = out_dim(h, self.kernel.0, self.stride, self.pad);
        let ow = out_dim(w, self.kernel.1, self.stride, self.pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "conv {}x{} stride {} pad {} yields no output for a {h}x{w} input",
                self.kernel.0, self.kernel.1, self.stride, self.pad
            ))),
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (oh, ow) = self.output_hw(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_channels, oh, ow))
    }

    /// Weight + bias element count.
    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + if self.bias { self.out_channels } else { 0 }
    }

    /// Multiply-accumulates for one image of spatial size `h x w`.
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (oh, ow) = self.output_hw(h, w)?;
        Ok((oh * ow) as u64 * self.weight_shape().numel() as u64)
    }

    fn check(&self, x: Shape, weight: Shape, bias_len: Option<usize>) -> Result<Shape> {
        self.validate()?;
        if x.c != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {x}",
                self.in_channels
            )));
        }
        if weight != self.weight_shape() {
            return Err(Error::shape(format!(
                "conv weight {weight} != expected {}",
                self.weight_shape()
            )));
        }
        match (self.bias, bias_len) {
            (true, Some(len)) if len == self.out_channels => {}
            (false, None) => {}
            (true, other) => {
                return Err(Error::shape(format!(
                    "conv bias length {other:?} != {}",
                    self.out_channels
                )))
            }
            (false, Some(_)) => return Err(Error::shape("bias supplied to a bias-free conv")),
        }
        self.output_shape(x)
    }
}

/// Floor-mode output extent; `None` when the window does not fit.
pub(crate) fn out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

struct Geometry {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(spec: &ConvSpec, x: Shape, out: Shape) -> Self {
        Geometry {
            h: x.h,
            w: x.w,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            oh: out.h,
            ow: out.w,
            stride: spec.stride,
            pad: spec.pad,
        }
    }

    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad).filter(|&i| i < limit)
    }

    /// Patch matrix for channels `c0..c0+cin` of one item: rows `(c, ky, kx)`, cols `(oy, ox)`.
    fn im2col<T: Element>(&self, item: &[T], c0: usize, cin: usize, col: &mut [T]) {
        let p = self.oh * self.ow;
        let plane = self.h * self.w;
        for ci in 0..cin {
            let src = &item[(c0 + ci) * plane..(c0 + ci + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &mut col[((ci * self.kh + ky) * self.kw + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        match self.src(oy, ky, self.h) {
                            None => dst.iter_mut().for_each(|v| *v = T::zero()),
                            Some(iy) => {
                                let line = &src[iy * self.w..(iy + 1) * self.w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match self.src(ox, kx, self.w) {
                                        Some(ix) => line[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch-matrix gradient back into channels `c0..c0+cin`.
    fn col2im<T: Element>(&self, col: &[T], c0: usize, cin: usize, item: &mut [T]) {
        let p = self.oh * self.ow;
        let plane = self.h * self.w;
        for ci in 0..cin {
            let dst = &mut item[(c0 + ci) * plane..(c0 + ci + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &col[((ci * self.kh + ky) * self.kw + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else {
                            continue;
                        };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                let d = &mut dst[iy * self.w + ix];
                                *d = *d + row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Fast convolution. Parallel over batch items; each output element has a
/// fixed reduction order, so results do not depend on the thread count.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let out_shape = spec.check(x.shape(), weight.shape(), bias.map(<[T]>::len))?;
    let geo = Geometry::new(spec, x.shape(), out_shape);
    let (cin, cout) = (spec.in_per_group(), spec.out_per_group());
    let k = cin * geo.kh * geo.kw;
    let p = out_shape.plane();
    let w = weight.data();

    let mut out = vec![T::zero(); out_shape.numel()];
    out.par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(n, dst)| {
            let item = x.item(n);
            let mut col = vec![T::zero(); k * p];
            for g in 0..spec.groups {
                geo.im2col(item, g * cin, cin, &mut col);
                T::gemm(
                    cout,
                    k,
                    p,
                    &w[g * cout * k..],
                    (k as isize, 1),
                    &col,
                    (p as isize, 1),
                    T::zero(),
                    &mut dst[g * cout * p..],
                    (p as isize, 1),
                );
            }
            if let Some(b) = bias {
                for (o, plane) in dst.chunks_mut(p).enumerate() {
                    plane.iter_mut().for_each(|v| *v = *v + b[o]);
                }
            }
        });
    Tensor::from_vec(out_shape, out)
}

/// Exact gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let bias_len = spec.bias.then_some(spec.out_channels);
    let out_shape = spec.check(x.shape(), weight.shape(), bias_len)?;
    if grad_out.shape() != out_shape {
        return Err(Error::shape(format!(
            "conv grad_out {} != output {out_shape}",
            grad_out.shape()
        )));
    }
    let geo = Geometry::new(spec, x.shape(), out_shape);
    let (cin, cout) = (spec.in_per_group(), spec.out_per_group());
    let k = cin * geo.kh * geo.kw;
    let p = out_shape.plane();
    let w = weight.data();
    let wlen = weight.shape().numel();

    let per_item: Vec<(Vec<T>, Vec<T>)> = (0..x.shape().n)
        .into_par_iter()
        .map(|n| {
            let item = x.item(n);
            let dy = grad_out.item(n);
            let mut dx = vec![T::zero(); x.shape().item()];
            let mut dw = vec![T::zero(); wlen];
            let mut col = vec![T::zero(); k * p];
            let mut dcol = vec![T::zero(); k * p];
            for g in 0..spec.groups {
                let dy_g = &dy[g * cout * p..];
                geo.im2col(item, g * cin, cin, &mut col);
                // dW_g = dY_g * col^T
                T::gemm(
                    cout,
                    p,
                    k,
                    dy_g,
                    (p as isize, 1),
                    &col,
                    (1, p as isize),
                    T::zero(),
                    &mut dw[g * cout * k..],
                    (k as isize, 1),
                );
                // dcol = W_g^T * dY_g
                T::gemm(
                    k,
                    cout,
                    p,
                    &w[g * cout * k..],
                    (1, k as isize),
                    dy_g,
                    (p as isize, 1),
                    T::zero(),
                    &mut dcol,
                    (p as isize, 1),
                );
                geo.col2im(&dcol, g * cin, cin, &mut dx);
            }
            (dx, dw)
        })
        .collect();

    let mut dx = Vec::with_capacity(x.shape().numel());
    let mut dw = vec![T::zero(); wlen];
    for (dxi, dwi) in per_item {
        dx.extend_from_slice(&dxi);
        for (a, b) in dw.iter_mut().zip(&dwi) {
            *a = *a + *b;
        }
    }
    let bias = spec.bias.then(|| bias_grad(grad_out));
    Ok(ConvGrads {
        input: Tensor::from_vec(x.shape(), dx)?,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias,
    })
}

fn bias_grad<T: Element>(grad_out: &Tensor<T>) -> Vec<T> {
    let s = grad_out.shape();
    let p = s.plane();
    let mut db = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (o, plane) in grad_out.item(n).chunks(p).enumerate() {
            db[o] = db[o] + plane.iter().copied().sum();
        }
    }
    db
}

/// Direct nested-loop convolution, the oracle for the fast path.
pub mod reference {
    use super::*;

    pub fn conv2d<T: Element>(
        x: &Tensor<T>,
        spec: &ConvSpec,
        weight: &Tensor<T>,
        bias: Option<&[T]>,
    ) -> Result<Tensor<T>> {
        let out_shape = spec.check(x.shape(), weight.shape(), bias.map(<[T]>::len))?;
        let geo = Geometry::new(spec, x.shape(), out_shape);
        let (cin, cout) = (spec.in_per_group(), spec.out_per_group());
        let mut out = Tensor::zeros(out_shape);
        for n in 0..out_shape.n {
            for o in 0..spec.out_channels {
                let g = o / cout;
                for oy in 0..geo.oh {
                    for ox in 0..geo.ow {
                        let mut acc = bias.map_or(T::zero(), |b| b[o]);
                        for ci in 0..cin {
                            for ky in 0..geo.kh {
                                let Some(iy) = geo.src(oy, ky, geo.h) else {
                                    continue;
                                };
                                for kx in 0..geo.kw {
                                    if let Some(ix) = geo.src(ox, kx, geo.w) {
                                        acc = acc
                                            + x.at(n, g * cin + ci, iy, ix)
                                                * weight.at(o, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        out.set(n, o, oy, ox, acc);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn conv2d_backward<T: Element>(
        x: &Tensor<T>,
        spec: &ConvSpec,
        weight: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<ConvGrads<T>> {
        let bias_len = spec.bias.then_some(spec.out_channels);
        let out_shape = spec.check(x.shape(), weight.shape(), bias_len)?;
        if grad_out.shape() != out_shape {
            return Err(Error::shape("conv grad_out shape"));
        }
        let geo = Geometry::new(spec, x.shape(), out_shape);
        let (cin, cout) = (spec.in_per_group(), spec.out_per_group());
        let mut dx = Tensor::zeros(x.shape());
        let mut dw = Tensor::zeros(weight.shape());
        for n in 0..out_shape.n {
            for o in 0..spec.out_channels {
                let g = o / cout;
                for oy in 0..geo.oh {
                    for ox in 0..geo.ow {
                        let dy = grad_out.at(n, o, oy, ox);
                        for ci in 0..cin {
                            for ky in 0..geo.kh {
                                let Some(iy) = geo.src(oy, ky, geo.h) else {
                                    continue;
                                };
                                for kx in 0..geo.kw {
                                    if let Some(ix) = geo.src(ox, kx, geo.w) {
                                        let c = g * cin + ci;
                                        let v = dx.at(n, c, iy, ix) + dy * weight.at(o, ci, ky, kx);
                                        dx.set(n, c, iy, ix, v);
                                        let v = dw.at(o, ci, ky, kx) + dy * x.at(n, c, iy, ix);
                                        dw.set(o, ci, ky, kx, v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: dx,
            weight: dw,
            bias: spec.bias.then(|| bias_grad(grad_out)),
        })
    }
}
