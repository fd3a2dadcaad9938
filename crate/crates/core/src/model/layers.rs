//! Parameterized building blocks: plain convolutions, EdgeBlock convolutions
//! (plain or learned-group), and the EdgeBlock layer with its backward pass.

use rand::Rng;

use crate::error::Result;
use crate::lgc::LearnedGroupConv;
use crate::nnops::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, init, relu, relu_backward, BatchNormState, BnCache,
    ConvGrads, ConvSpec,
};
use crate::tensor::{concat_channels, split_channels, Element, Shape, Tensor};
use crate::Mode;

/// Dense, biased convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    /// `(1, out, 1, 1)`.
    pub bias: Tensor<T>,
}

impl<T: Element> ConvLayer<T> {
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = spec.in_per_group() * spec.kernel.0 * spec.kernel.1;
        ConvLayer {
            weight: init::he_normal(spec.weight_shape(), fan_in, rng),
            bias: Tensor::zeros(Shape::new(1, spec.out_channels, 1, 1)),
            spec,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.spec, &self.weight, Some(self.bias.data()))
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = conv2d_backward(x, &self.spec, &self.weight, grad_out)?;
        accumulate(&mut self.weight, &mut self.bias, g)
    }
}

fn accumulate<T: Element>(weight: &mut Tensor<T>, bias: &mut Tensor<T>, g: ConvGrads<T>) -> Result<Tensor<T>> {
    weight.accumulate_grad(g.weight.data())?;
    if let Some(db) = g.bias {
        bias.accumulate_grad(&db)?;
    }
    Ok(g.input)
}

/// Convolution inside an EdgeBlock.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockConv<T> {
    Plain(ConvLayer<T>),
    Learned(LearnedGroupConv<T>),
}

impl<T: Element> BlockConv<T> {
    pub fn in_channels(&self) -> usize {
        self.dense_spec().in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.dense_spec().out_channels
    }

    /// Storage spec: for learned layers the dense (groups = 1) form.
    pub fn dense_spec(&self) -> &ConvSpec {
        match self {
            BlockConv::Plain(c) => &c.spec,
            BlockConv::Learned(l) => l.spec(),
        }
    }

    pub fn learned(&self) -> Option<&LearnedGroupConv<T>> {
        match self {
            BlockConv::Learned(l) => Some(l),
            BlockConv::Plain(_) => None,
        }
    }

    /// Train mode runs the masked dense form; infer mode runs the grouped
    /// export once a learned layer is fully condensed.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            BlockConv::Plain(c) => c.forward(x),
            BlockConv::Learned(l) if mode == Mode::Infer && l.is_fully_condensed() => {
                l.export_grouped()?.forward(x)
            }
            BlockConv::Learned(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            BlockConv::Plain(c) => c.backward(x, grad_out),
            BlockConv::Learned(l) => {
                let g = l.backward(x, grad_out)?;
                accumulate(&mut l.weight, &mut l.bias, g)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct EdgeLayerCache<T> {
    input: Tensor<T>,
    bn1: BnCache<T>,
    pre_relu: Tensor<T>,
    hidden: Tensor<T>,
    bn2: BnCache<T>,
}

/// One EdgeBlock layer:
/// `conv3x3(4k) -> BN -> ReLU -> conv3x3(k) -> BN`, concatenated onto its input.
#[derive(Clone, Debug)]
pub struct EdgeLayer<T> {
    pub conv1: BlockConv<T>,
    pub bn1: BatchNormState<T>,
    pub conv2: BlockConv<T>,
    pub bn2: BatchNormState<T>,
    pub(crate) cache: Option<EdgeLayerCache<T>>,
}

impl<T: Element> PartialEq for EdgeLayer<T> {
    fn eq(&self, other: &Self) -> bool {
        self.conv1 == other.conv1 && self.bn1 == other.bn1 && self.conv2 == other.conv2 && self.bn2 == other.bn2
    }
}

impl<T: Element> EdgeLayer<T> {
    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn growth(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let a1 = self.conv1.forward(x, mode)?;
        let (b1, bn1) = batchnorm(&a1, &mut self.bn1, mode)?;
        let r1 = relu(&b1);
        let a2 = self.conv2.forward(&r1, mode)?;
        let (b2, bn2) = batchnorm(&a2, &mut self.bn2, mode)?;
        let out = concat_channels(&[x, &b2])?;
        self.cache = match (bn1, bn2) {
            (Some(bn1), Some(bn2)) => Some(EdgeLayerCache {
                input: x.clone(),
                bn1,
                pre_relu: b1,
                hidden: r1,
                bn2,
            }),
            _ => None,
        };
        Ok(out)
    }

    /// Read-only inference forward.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a1 = self.conv1.forward(x, Mode::Infer)?;
        let r1 = relu(&crate::nnops::batchnorm_infer(&a1, &self.bn1)?);
        let a2 = self.conv2.forward(&r1, Mode::Infer)?;
        let b2 = crate::nnops::batchnorm_infer(&a2, &self.bn2)?;
        concat_channels(&[x, &b2])
    }

    /// Takes the gradient of the concatenated output, returns the gradient of the layer input.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| crate::Error::Config("EdgeLayer backward without a train-mode forward".into()))?;
        let mut parts = split_channels(grad_out, &[self.in_channels(), self.growth()])?;
        let d_branch = parts.pop().unwrap();
        let mut d_input = parts.pop().unwrap();

        let g2 = batchnorm_backward(&d_branch, &cache.bn2, self.bn2.gamma.data())?;
        self.bn2.gamma.accumulate_grad(&g2.gamma)?;
        self.bn2.beta.accumulate_grad(&g2.beta)?;
        let d_hidden = self.conv2.backward(&cache.hidden, &g2.input)?;
        let d_pre = relu_backward(&d_hidden, &cache.pre_relu)?;
        let g1 = batchnorm_backward(&d_pre, &cache.bn1, self.bn1.gamma.data())?;
        self.bn1.gamma.accumulate_grad(&g1.gamma)?;
        self.bn1.beta.accumulate_grad(&g1.beta)?;
        let d_x = self.conv1.backward(&cache.input, &g1.input)?;

        for (a, b) in d_input.data_mut().iter_mut().zip(d_x.data()) {
            *a = *a + *b;
        }
        Ok(d_input)
    }
}
