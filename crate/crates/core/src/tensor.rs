//! Rank-4 NCHW tensors and the channel-axis plumbing behind dense connectivity.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// On-disk element tag, shared with the checkpoint format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
    U32,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U8 => 2,
            DType::U32 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::U8),
            3 => Some(DType::U32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
            DType::U32 => 4,
        }
    }
}

/// Runtime precision selector. Training runs in `F32`, gradient checks in `F64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Real scalar usable as a tensor element.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Default + Sum + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const DTYPE: DType;

    /// `c = a * b + beta * c` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every float element type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float element converts to f64")
    }
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

macro_rules! impl_element {
    ($ty:ty, $dtype:expr, $gemm:path) => {
        impl Element for $ty {
            const DTYPE: DType = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(a_strides.0 >= 0 && a_strides.1 >= 0);
                assert!(b_strides.0 >= 0 && b_strides.1 >= 0);
                assert!(c_strides.0 >= 0 && c_strides.1 >= 0);
                assert!(a.len() >= span(m, k, a_strides), "gemm: A too short");
                assert!(b.len() >= span(k, n, b_strides), "gemm: B too short");
                assert!(c.len() >= span(m, n, c_strides), "gemm: C too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above keep every strided access inside the slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$ty>::from_le_bytes(bytes.try_into().expect("element width"))
            }
        }
    };
}

impl_element!(f32, DType::F32, matrixmultiply::sgemm);
impl_element!(f64, DType::F64, matrixmultiply::dgemm);

/// `(n, c, h, w)` extents of an NCHW tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one `h x w` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub const fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Value equality: shape and data; gradient buffers are ignored.
impl<T: PartialEq> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "{} elements supplied for shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous slice for batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of {} elements for tensor {}",
                delta.len(),
                self.shape
            )));
        }
        let grad = self
            .grad
            .get_or_insert_with(|| vec![T::zero(); delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g = *g + *d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Pure reshape; element order is preserved.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// `(n, c, h, w) -> (n, c*h*w, 1, 1)`.
    pub fn flatten(self) -> Self {
        let s = self.shape;
        let shape = Shape::new(s.n, s.item(), 1, 1);
        self.reshape(shape).expect("flatten preserves element count")
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

/// Concatenates tensors along the channel axis; part `i` occupies a contiguous
/// channel slab in input order.
pub fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels on an empty list"))?
        .shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(format!(
                "concat_channels: {s} does not match {first} outside the channel axis"
            )));
        }
        channels += s.c;
    }
    let out_shape = first.with_channels(channels);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for p in parts {
            data.extend_from_slice(p.item(n));
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Backward of [`concat_channels`]: splits an upstream gradient into per-part slabs.
pub fn split_channels<T: Element>(grad: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = grad.shape();
    if widths.iter().sum::<usize>() != s.c {
        return Err(Error::shape(format!(
            "split_channels: widths {widths:?} do not sum to {} channels",
            s.c
        )));
    }
    let plane = s.plane();
    let mut parts: Vec<Vec<T>> = widths
        .iter()
        .map(|w| Vec::with_capacity(s.n * w * plane))
        .collect();
    for n in 0..s.n {
        let item = grad.item(n);
        let mut start = 0;
        for (part, w) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&item[start * plane..(start + w) * plane]);
            start += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(data, &w)| Tensor::from_vec(s.with_channels(w), data))
        .collect()
}

/// Output channel `k` is input channel `idx[k]`. Duplicates are allowed.
pub fn index_select_channels<T: Element>(x: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let s = x.shape();
    if let Some(&bad) = idx.iter().find(|&&i| i >= s.c) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: s.c,
        });
    }
    let plane = s.plane();
    let out_shape = s.with_channels(idx.len());
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        let item = x.item(n);
        for &c in idx {
            data.extend_from_slice(&item[c * plane..(c + 1) * plane]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Backward of [`index_select_channels`]: scatter-adds the upstream gradient
/// into a tensor with `in_channels` channels.
pub fn index_select_channels_backward<T: Element>(
    grad: &Tensor<T>,
    idx: &[usize],
    in_channels: usize,
) -> Result<Tensor<T>> {
    let s = grad.shape();
    if s.c != idx.len() {
        return Err(Error::shape(format!(
            "index_select backward: gradient has {} channels, index list {}",
            s.c,
            idx.len()
        )));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= in_channels) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: in_channels,
        });
    }
    let plane = s.plane();
    let mut out = Tensor::zeros(s.with_channels(in_channels));
    let out_item = in_channels * plane;
    for n in 0..s.n {
        let g = grad.item(n);
        let dst = &mut out.data[n * out_item..(n + 1) * out_item];
        for (k, &c) in idx.iter().enumerate() {
            for (d, v) in dst[c * plane..(c + 1) * plane]
                .iter_mut()
                .zip(&g[k * plane..(k + 1) * plane])
            {
                *d = *d + *v;
            }
        }
    }
    Ok(out)
}
