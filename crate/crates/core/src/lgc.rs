//! Learned group convolution.
//!
//! A 3x3 convolution trained densely under a binary input mask. Output
//! channels are split into `G` groups; every group owns one input-selection
//! row shared by all of its filters. Over `C - 1` condensing stages the
//! least important inputs of each group are pruned (importance = summed L1
//! norm of the group's kernel slices for that input) until each group keeps
//! `1/C` of its inputs. A fully condensed layer lowers to an index-select
//! followed by an ordinary grouped convolution.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nnops::{conv2d, conv2d_backward, init, ConvGrads, ConvSpec};
use crate::tensor::{index_select_channels, Element, Shape, Tensor};

/// Condensing stage that should be in effect at `epoch` (0-based).
///
/// The `C - 1` stages are spread uniformly over the first half of training;
/// the second half runs fully condensed.
pub fn condensation_stage_for_epoch(epoch: usize, total_epochs: usize, condensation: usize) -> Result<usize> {
    if condensation == 0 {
        return Err(Error::Schedule("condensation factor must be at least 1".into()));
    }
    let stages = condensation - 1;
    if stages == 0 {
        return Ok(0);
    }
    if total_epochs < 2 * stages {
        return Err(Error::Schedule(format!(
            "{total_epochs} epochs cannot host {stages} condensing stages (need at least {})",
            2 * stages
        )));
    }
    Ok((epoch * 2 * stages / total_epochs).min(stages))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedGroupConv<T> {
    /// Dense storage spec (`groups == 1`).
    spec: ConvSpec,
    pub weight: Tensor<T>,
    /// `(1, out, 1, 1)`.
    pub bias: Tensor<T>,
    /// Row-major `out x in`, `true` = connection alive.
    mask: Vec<bool>,
    groups: usize,
    condensation: usize,
    stage: usize,
}

/// Inference form of a fully condensed layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedExport<T> {
    /// Concatenated per-group input channel lists.
    pub indices: Vec<usize>,
    pub spec: ConvSpec,
    /// `(out, in_per_group, kh, kw)`.
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Element> GroupedExport<T> {
    pub fn group_indices(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.spec.in_per_group())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let gathered = index_select_channels(x, &self.indices)?;
        conv2d(&gathered, &self.spec, &self.weight, Some(&self.bias))
    }
}

impl<T: Element> LearnedGroupConv<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        condensation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = ConvSpec::same3x3(in_channels, out_channels);
        let weight = init::he_normal(spec.weight_shape(), in_channels * 9, rng);
        let bias = Tensor::zeros(Shape::new(1, out_channels, 1, 1));
        Self::from_parts(spec, groups, condensation, 0, weight, bias, vec![true; out_channels * in_channels])
    }

    pub fn from_parts(
        spec: ConvSpec,
        groups: usize,
        condensation: usize,
        stage: usize,
        weight: Tensor<T>,
        bias: Tensor<T>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.groups != 1 || !spec.bias {
            return Err(Error::Config("learned group conv stores a dense, biased convolution".into()));
        }
        if groups == 0 || !spec.out_channels.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "G = {groups} must divide {} output channels",
                spec.out_channels
            )));
        }
        if condensation == 0 || stage >= condensation {
            return Err(Error::Config(format!(
                "stage {stage} invalid for condensation factor {condensation}"
            )));
        }
        if weight.shape() != spec.weight_shape() || bias.shape().numel() != spec.out_channels {
            return Err(Error::shape("learned group conv parameter shapes"));
        }
        let mut layer = LearnedGroupConv {
            spec,
            weight,
            bias,
            mask: Vec::new(),
            groups,
            condensation,
            stage,
        };
        layer.set_mask(mask)?;
        Ok(layer)
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn condensation(&self) -> usize {
        self.condensation
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn in_channels(&self) -> usize {
        self.spec.in_channels
    }

    pub fn out_per_group(&self) -> usize {
        self.spec.out_channels / self.groups
    }

    pub fn is_fully_condensed(&self) -> bool {
        self.stage + 1 == self.condensation
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Replaces the mask. Rows inside an output group must agree; pruned
    /// weights are zeroed.
    pub fn set_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        let (out, inp) = (self.spec.out_channels, self.spec.in_channels);
        if mask.len() != out * inp {
            return Err(Error::shape(format!("mask of {} entries for {out}x{inp}", mask.len())));
        }
        let per = self.out_per_group();
        for o in 0..out {
            let lead = (o / per) * per;
            if mask[o * inp..(o + 1) * inp] != mask[lead * inp..(lead + 1) * inp] {
                return Err(Error::Condense(format!(
                    "mask row {o} differs from its group leader {lead}"
                )));
            }
        }
        self.mask = mask;
        self.apply_mask_to_weights();
        Ok(())
    }

    fn apply_mask_to_weights(&mut self) {
        let k = self.spec.kernel.0 * self.spec.kernel.1;
        for (slice, &alive) in self.weight.data_mut().chunks_mut(k).zip(&self.mask) {
            if !alive {
                slice.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Alive input channels of output group `g`, ascending.
    pub fn alive_inputs(&self, g: usize) -> Vec<usize> {
        let inp = self.spec.in_channels;
        let row = g * self.out_per_group();
        (0..inp).filter(|&j| self.mask[row * inp + j]).collect()
    }

    /// Alive inputs per group after `stage` condensing stages.
    pub fn alive_target(&self, stage: usize) -> usize {
        (self.spec.in_channels * (self.condensation - stage) / self.condensation).max(1)
    }

    /// The mask expanded to the weight layout (1 alive, 0 pruned).
    pub fn weight_mask(&self) -> Vec<T> {
        let k = self.spec.kernel.0 * self.spec.kernel.1;
        self.mask
            .iter()
            .flat_map(|&m| std::iter::repeat_n(if m { T::one() } else { T::zero() }, k))
            .collect()
    }

    pub fn masked_weight(&self) -> Tensor<T> {
        let mut w = self.weight.clone();
        for (v, m) in w.data_mut().iter_mut().zip(self.weight_mask()) {
            *v = *v * m;
        }
        w
    }

    /// Dense convolution over the masked weights.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.spec, &self.masked_weight(), Some(self.bias.data()))
    }

    /// Gradients for input, weight and bias; pruned weight entries get zero.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let mut grads = conv2d_backward(x, &self.spec, &self.masked_weight(), grad_out)?;
        for (g, m) in grads.weight.data_mut().iter_mut().zip(self.weight_mask()) {
            *g = *g * m;
        }
        Ok(grads)
    }

    /// Importance of each input channel for output group `g`.
    pub fn importance(&self, g: usize) -> Vec<T> {
        let inp = self.spec.in_channels;
        let k = self.spec.kernel.0 * self.spec.kernel.1;
        let per = self.out_per_group();
        let mut score = vec![T::zero(); inp];
        for o in g * per..(g + 1) * per {
            let filter = self.weight.item(o);
            for (j, s) in score.iter_mut().enumerate() {
                *s = *s + filter[j * k..(j + 1) * k].iter().map(|v| v.abs()).sum();
            }
        }
        score
    }

    /// Advances one condensing stage.
    pub fn condense(&mut self) -> Result<()> {
        if self.is_fully_condensed() {
            return Err(Error::Condense(format!(
                "layer already fully condensed (stage {} of C = {})",
                self.stage, self.condensation
            )));
        }
        let target = self.alive_target(self.stage + 1);
        let inp = self.spec.in_channels;
        let per = self.out_per_group();
        for g in 0..self.groups {
            let score = self.importance(g);
            let mut alive = self.alive_inputs(g);
            if alive.len() <= target {
                continue;
            }
            // lowest importance first; ties prune the lower channel index
            alive.sort_by(|&a, &b| score[a].partial_cmp(&score[b]).unwrap().then(a.cmp(&b)));
            let drop = alive.len() - target;
            for &j in &alive[..drop] {
                for o in g * per..(g + 1) * per {
                    self.mask[o * inp + j] = false;
                }
            }
        }
        self.apply_mask_to_weights();
        self.stage += 1;
        Ok(())
    }

    /// Lowers a fully condensed layer to index-select + grouped convolution.
    pub fn export_grouped(&self) -> Result<GroupedExport<T>> {
        if !self.is_fully_condensed() {
            return Err(Error::Condense(format!(
                "export needs a fully condensed layer (stage {} of C = {})",
                self.stage, self.condensation
            )));
        }
        let per_group: Vec<Vec<usize>> = (0..self.groups).map(|g| self.alive_inputs(g)).collect();
        let k_in = per_group[0].len();
        if per_group.iter().any(|p| p.len() != k_in) || k_in == 0 {
            return Err(Error::Condense(format!(
                "groups have unequal alive counts {:?}",
                per_group.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        let (kh, kw) = self.spec.kernel;
        let ksz = kh * kw;
        let out = self.spec.out_channels;
        let per = self.out_per_group();
        let spec = ConvSpec {
            in_channels: k_in * self.groups,
            out_channels: out,
            groups: self.groups,
            ..self.spec
        };
        let mut packed = Vec::with_capacity(out * k_in * ksz);
        for o in 0..out {
            let filter = self.weight.item(o);
            for &j in &per_group[o / per] {
                packed.extend_from_slice(&filter[j * ksz..(j + 1) * ksz]);
            }
        }
        Ok(GroupedExport {
            indices: per_group.concat(),
            weight: Tensor::from_vec(spec.weight_shape(), packed)?,
            bias: self.bias.data().to_vec(),
            spec,
        })
    }

    /// Inverse of [`Self::export_grouped`]: rebuilds dense masked storage.
    pub fn from_export(export: &GroupedExport<T>, in_channels: usize, condensation: usize) -> Result<Self> {
        let groups = export.spec.groups;
        let out = export.spec.out_channels;
        let k_in = export.spec.in_per_group();
        let spec = ConvSpec::same3x3(in_channels, out);
        if export.spec.kernel != spec.kernel || export.indices.len() != groups * k_in {
            return Err(Error::Format("grouped export does not describe a 3x3 layer".into()));
        }
        let ksz = 9;
        let per = out / groups;
        let mut mask = vec![false; out * in_channels];
        let mut weight = Tensor::zeros(spec.weight_shape());
        for o in 0..out {
            let g = o / per;
            let idx = &export.indices[g * k_in..(g + 1) * k_in];
            let src = export.weight.item(o);
            for (slot, &j) in idx.iter().enumerate() {
                if j >= in_channels {
                    return Err(Error::IndexOutOfRange {
                        index: j,
                        len: in_channels,
                    });
                }
                mask[o * in_channels + j] = true;
                let dst = &mut weight.data_mut()[(o * in_channels + j) * ksz..][..ksz];
                dst.copy_from_slice(&src[slot * ksz..(slot + 1) * ksz]);
            }
        }
        let bias = Tensor::from_vec(Shape::new(1, out, 1, 1), export.bias.clone())?;
        Self::from_parts(spec, groups, condensation, condensation - 1, weight, bias, mask)
    }
}
