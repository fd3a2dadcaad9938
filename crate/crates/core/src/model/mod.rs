//! EdgeCNN and EdgeCNN-G assembly.
//!
//! ```text
//! 3x3 conv(32) -> BN -> ReLU -> 3x3 max pool /2
//!   -> EdgeBlock x4 -> 2x2 avg pool /2
//!   -> EdgeBlock x4 -> 2x2 avg pool /2
//!   -> EdgeBlock x7 -> global avg pool -> FC(7)
//! ```
//!
//! Dense connectivity is block-local; transitions are pooling only.

mod config;
mod layers;

pub use config::{LgcParams, ModelConfig, Variant};
pub use layers::{BlockConv, ConvLayer, EdgeLayer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lgc::{GroupedExport, LearnedGroupConv};
use crate::nnops::{
    avgpool2d, avgpool2d_backward, batchnorm, batchnorm_backward, batchnorm_infer, global_avgpool,
    global_avgpool_backward, init, linear, linear_backward, linear_weight_shape, maxpool2d, maxpool2d_backward,
    relu, relu_backward, BatchNormState, BnCache, ConvSpec, PoolSpec,
};
use crate::tensor::{Element, Shape, Tensor};
use crate::train::checkpoint::{Checkpoint, Record};
use crate::Mode;

/// Learned-group-conv bookkeeping for one layer in the layer graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LgcInfo {
    pub groups: usize,
    pub condensation: usize,
    pub stage: usize,
    pub alive_per_group: usize,
}

impl LgcInfo {
    pub fn fully_condensed(&self) -> bool {
        self.stage + 1 == self.condensation
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerKind {
    Input,
    Conv { spec: ConvSpec, learned: Option<LgcInfo> },
    BatchNorm { channels: usize },
    Relu,
    MaxPool(PoolSpec),
    AvgPool(PoolSpec),
    Concat,
    GlobalAvgPool,
    Linear { in_features: usize, out_features: usize },
}

/// One node of the execution graph, in execution order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    /// Indices of producer nodes.
    pub inputs: Vec<usize>,
    pub output: Shape,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub layer: String,
    pub operator: String,
    pub output: Shape,
}

impl TraceRow {
    /// `HxWxC`, the layout used by the architecture tables.
    pub fn hwc(&self) -> String {
        format!("{}x{}x{}", self.output.h, self.output.w, self.output.c)
    }
}

/// Mutable view of one trainable tensor.
pub struct ParamMut<'a, T> {
    pub name: String,
    pub tensor: &'a mut Tensor<T>,
    /// Weight decay applies (conv and FC weights).
    pub decay: bool,
    /// Pruning mask in the tensor's layout (1 alive, 0 pruned).
    pub mask: Option<Vec<T>>,
}

#[derive(Clone, Debug)]
struct ModelCache<T> {
    input: Tensor<T>,
    stem_bn: BnCache<T>,
    stem_pre_relu: Tensor<T>,
    pool_argmax: Vec<usize>,
    pool_input: Shape,
    transition_inputs: Vec<Shape>,
    gap_input: Shape,
    features: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub stem: ConvLayer<T>,
    pub stem_bn: BatchNormState<T>,
    pub blocks: Vec<Vec<EdgeLayer<T>>>,
    /// `(classes, features, 1, 1)`.
    pub classifier_weight: Tensor<T>,
    /// `(1, classes, 1, 1)`.
    pub classifier_bias: Tensor<T>,
    cache: Option<ModelCache<T>>,
}

impl<T: Element> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.stem == other.stem
            && self.stem_bn == other.stem_bn
            && self.blocks == other.blocks
            && self.classifier_weight == other.classifier_weight
            && self.classifier_bias == other.classifier_bias
    }
}

impl<T: Element> Model<T> {
    /// Builds a freshly initialized network. All randomness comes from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, _, in_c) = config.input_size;
        let stem = ConvLayer::new(ConvSpec::same3x3(in_c, config.stem_channels), &mut rng);
        let stem_bn = BatchNormState::new(config.stem_channels);

        let mut width = config.stem_channels;
        let mut blocks = Vec::with_capacity(config.block_lengths.len());
        for &len in &config.block_lengths {
            let mut layers = Vec::with_capacity(len);
            for _ in 0..len {
                let mid = config.bottleneck_width();
                let (conv1, conv2) = match config.variant {
                    Variant::Dense => (
                        BlockConv::Plain(ConvLayer::new(ConvSpec::same3x3(width, mid), &mut rng)),
                        BlockConv::Plain(ConvLayer::new(ConvSpec::same3x3(mid, config.growth_rate), &mut rng)),
                    ),
                    Variant::Grouped => {
                        let (p1, p2) = (config.conv1_lgc, config.conv2_lgc);
                        (
                            BlockConv::Learned(LearnedGroupConv::new(width, mid, p1.groups, p1.condensation, &mut rng)?),
                            BlockConv::Learned(LearnedGroupConv::new(
                                mid,
                                config.growth_rate,
                                p2.groups,
                                p2.condensation,
                                &mut rng,
                            )?),
                        )
                    }
                };
                layers.push(EdgeLayer {
                    conv1,
                    bn1: BatchNormState::new(mid),
                    conv2,
                    bn2: BatchNormState::new(config.growth_rate),
                    cache: None,
                });
                width += config.growth_rate;
            }
            blocks.push(layers);
        }
        let features = width;
        let model = Model {
            classifier_weight: init::he_uniform(linear_weight_shape(features, config.num_classes), features, &mut rng),
            classifier_bias: Tensor::zeros(Shape::new(1, config.num_classes, 1, 1)),
            config: config.clone(),
            stem,
            stem_bn,
            blocks,
            cache: None,
        };
        model.check_channel_plan()?;
        Ok(model)
    }

    /// Every layer's input width must follow `block input + i * growth`.
    fn check_channel_plan(&self) -> Result<()> {
        let exits = self.config.block_exit_channels();
        let mut width = self.config.stem_channels;
        if self.stem.spec.out_channels != width {
            return Err(Error::Config("stem width disagrees with config".into()));
        }
        for (b, layers) in self.blocks.iter().enumerate() {
            for (i, layer) in layers.iter().enumerate() {
                if layer.in_channels() != width || layer.growth() != self.config.growth_rate {
                    return Err(Error::Config(format!(
                        "block {} layer {i}: input width {} != planned {width}",
                        b + 1,
                        layer.in_channels()
                    )));
                }
                width += layer.growth();
            }
            if width != exits[b] {
                return Err(Error::Config(format!("block {} exits at {width}, planned {}", b + 1, exits[b])));
            }
        }
        if self.classifier_weight.shape().item() != width {
            return Err(Error::Config("classifier width disagrees with the channel plan".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        let (h, w, c) = self.config.input_size;
        Shape::new(batch, c, h, w)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let expect = self.input_shape(x.shape().n);
        if x.shape() != expect || x.shape().n == 0 {
            return Err(Error::shape(format!("model input {} != expected (n, {}, {}, {})", x.shape(), expect.c, expect.h, expect.w)));
        }
        Ok(())
    }

    /// Logits `(n, classes, 1, 1)`. Train mode caches activations for [`Self::backward`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            self.cache = None;
            return self.predict(x);
        }
        self.check_input(x)?;
        let a = self.stem.forward(x)?;
        let (b, stem_bn) = batchnorm(&a, &mut self.stem_bn, Mode::Train)?;
        let r = relu(&b);
        let pool_input = r.shape();
        let (mut h, pool_argmax) = maxpool2d(&r, PoolSpec::MAX_3S2)?;
        let mut transition_inputs = Vec::new();
        let nblocks = self.blocks.len();
        for (bi, layers) in self.blocks.iter_mut().enumerate() {
            for layer in layers.iter_mut() {
                h = layer.forward(&h, Mode::Train)?;
            }
            h.ensure_finite(&format!("EdgeBlock ({})", bi + 1))?;
            if bi + 1 < nblocks {
                transition_inputs.push(h.shape());
                h = avgpool2d(&h, PoolSpec::AVG_2S2)?;
            }
        }
        let gap_input = h.shape();
        let features = global_avgpool(&h);
        let logits = linear(&features, &self.classifier_weight, self.classifier_bias.data())?;
        logits.ensure_finite("classifier")?;
        self.cache = Some(ModelCache {
            input: x.clone(),
            stem_bn: stem_bn.expect("train mode yields a cache"),
            stem_pre_relu: b,
            pool_argmax,
            pool_input,
            transition_inputs,
            gap_input,
            features,
        });
        Ok(logits)
    }

    /// Inference forward; never mutates the model.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let a = self.stem.forward(x)?;
        let r = relu(&batchnorm_infer(&a, &self.stem_bn)?);
        let (mut h, _) = maxpool2d(&r, PoolSpec::MAX_3S2)?;
        let nblocks = self.blocks.len();
        for (bi, layers) in self.blocks.iter().enumerate() {
            for layer in layers {
                h = layer.predict(&h)?;
            }
            if bi + 1 < nblocks {
                h = avgpool2d(&h, PoolSpec::AVG_2S2)?;
            }
        }
        let logits = linear(&global_avgpool(&h), &self.classifier_weight, self.classifier_bias.data())?;
        logits.ensure_finite("classifier")?;
        Ok(logits)
    }

    /// Back-propagates `d loss / d logits`, accumulating parameter gradients.
    /// Returns the gradient with respect to the input batch.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Config("backward called without a train-mode forward".into()))?;
        let lg = linear_backward(&cache.features, &self.classifier_weight, grad_logits)?;
        self.classifier_weight.accumulate_grad(lg.weight.data())?;
        self.classifier_bias.accumulate_grad(&lg.bias)?;
        let mut g = global_avgpool_backward(&lg.input, cache.gap_input)?;
        let nblocks = self.blocks.len();
        for bi in (0..nblocks).rev() {
            if bi + 1 < nblocks {
                g = avgpool2d_backward(&g, PoolSpec::AVG_2S2, cache.transition_inputs[bi])?;
            }
            for layer in self.blocks[bi].iter_mut().rev() {
                g = layer.backward(&g)?;
            }
        }
        let g = maxpool2d_backward(&g, &cache.pool_argmax, cache.pool_input)?;
        let g = relu_backward(&g, &cache.stem_pre_relu)?;
        let bn = batchnorm_backward(&g, &cache.stem_bn, self.stem_bn.gamma.data())?;
        self.stem_bn.gamma.accumulate_grad(&bn.gamma)?;
        self.stem_bn.beta.accumulate_grad(&bn.beta)?;
        self.stem.backward(&cache.input, &bn.input)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.tensor.zero_grad();
        }
    }

    /// Every trainable tensor, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        fn conv<'a, T: Element>(out: &mut Vec<ParamMut<'a, T>>, prefix: &str, c: &'a mut BlockConv<T>) {
            let (w, b, mask) = match c {
                BlockConv::Plain(c) => (&mut c.weight, &mut c.bias, None),
                BlockConv::Learned(l) => {
                    let m = l.weight_mask();
                    (&mut l.weight, &mut l.bias, Some(m))
                }
            };
            out.push(ParamMut { name: format!("{prefix}.weight"), tensor: w, decay: true, mask });
            out.push(ParamMut { name: format!("{prefix}.bias"), tensor: b, decay: false, mask: None });
        }
        fn bn<'a, T: Element>(out: &mut Vec<ParamMut<'a, T>>, prefix: &str, s: &'a mut BatchNormState<T>) {
            out.push(ParamMut { name: format!("{prefix}.gamma"), tensor: &mut s.gamma, decay: false, mask: None });
            out.push(ParamMut { name: format!("{prefix}.beta"), tensor: &mut s.beta, decay: false, mask: None });
        }

        let mut out = Vec::new();
        out.push(ParamMut { name: "stem.conv.weight".into(), tensor: &mut self.stem.weight, decay: true, mask: None });
        out.push(ParamMut { name: "stem.conv.bias".into(), tensor: &mut self.stem.bias, decay: false, mask: None });
        bn(&mut out, "stem.bn", &mut self.stem_bn);
        for (bi, layers) in self.blocks.iter_mut().enumerate() {
            for (li, layer) in layers.iter_mut().enumerate() {
                let p = format!("block{}.layer{li}", bi + 1);
                conv(&mut out, &format!("{p}.conv1"), &mut layer.conv1);
                bn(&mut out, &format!("{p}.bn1"), &mut layer.bn1);
                conv(&mut out, &format!("{p}.conv2"), &mut layer.conv2);
                bn(&mut out, &format!("{p}.bn2"), &mut layer.bn2);
            }
        }
        out.push(ParamMut { name: "classifier.weight".into(), tensor: &mut self.classifier_weight, decay: true, mask: None });
        out.push(ParamMut { name: "classifier.bias".into(), tensor: &mut self.classifier_bias, decay: false, mask: None });
        out
    }

    pub fn learned_layers(&self) -> Vec<(String, &LearnedGroupConv<T>)> {
        let mut out = Vec::new();
        for (bi, layers) in self.blocks.iter().enumerate() {
            for (li, layer) in layers.iter().enumerate() {
                for (tag, c) in [("conv1", &layer.conv1), ("conv2", &layer.conv2)] {
                    if let Some(l) = c.learned() {
                        out.push((format!("block{}.layer{li}.{tag}", bi + 1), l));
                    }
                }
            }
        }
        out
    }

    pub fn learned_layers_mut(&mut self) -> Vec<(String, &mut LearnedGroupConv<T>)> {
        let mut out = Vec::new();
        for (bi, layers) in self.blocks.iter_mut().enumerate() {
            for (li, layer) in layers.iter_mut().enumerate() {
                for (tag, c) in [("conv1", &mut layer.conv1), ("conv2", &mut layer.conv2)] {
                    if let BlockConv::Learned(l) = c {
                        out.push((format!("block{}.layer{li}.{tag}", bi + 1), l));
                    }
                }
            }
        }
        out
    }

    pub fn is_fully_condensed(&self) -> bool {
        self.learned_layers().iter().all(|(_, l)| l.is_fully_condensed())
    }

    /// Execution graph for a batch of `batch` images, computed symbolically.
    pub fn graph(&self, batch: usize) -> Result<Vec<LayerNode>> {
        let mut g = GraphBuilder::default();
        let input = g.push("input", LayerKind::Input, vec![], self.input_shape(batch));
        let s = self.stem.spec.output_shape(self.input_shape(batch))?;
        let c = g.push("stem.conv", LayerKind::Conv { spec: self.stem.spec, learned: None }, vec![input], s);
        let b = g.push("stem.bn", LayerKind::BatchNorm { channels: s.c }, vec![c], s);
        let r = g.push("stem.relu", LayerKind::Relu, vec![b], s);
        let ps = PoolSpec::MAX_3S2.output_shape(s)?;
        let mut h = g.push("stem.maxpool", LayerKind::MaxPool(PoolSpec::MAX_3S2), vec![r], ps);
        let nblocks = self.blocks.len();
        for (bi, layers) in self.blocks.iter().enumerate() {
            for (li, layer) in layers.iter().enumerate() {
                let p = format!("block{}.layer{li}", bi + 1);
                let xs = g.nodes[h].output;
                let mut cur = h;
                for (tag, conv, bn, act) in [
                    ("1", &layer.conv1, &layer.bn1, true),
                    ("2", &layer.conv2, &layer.bn2, false),
                ] {
                    let spec = *conv.dense_spec();
                    let os = spec.output_shape(g.nodes[cur].output)?;
                    let learned = conv.learned().map(|l| LgcInfo {
                        groups: l.groups(),
                        condensation: l.condensation(),
                        stage: l.stage(),
                        alive_per_group: l.alive_inputs(0).len(),
                    });
                    cur = g.push(&format!("{p}.conv{tag}"), LayerKind::Conv { spec, learned }, vec![cur], os);
                    cur = g.push(&format!("{p}.bn{tag}"), LayerKind::BatchNorm { channels: bn.channels() }, vec![cur], os);
                    if act {
                        cur = g.push(&format!("{p}.relu{tag}"), LayerKind::Relu, vec![cur], os);
                    }
                }
                let cs = xs.with_channels(xs.c + layer.growth());
                h = g.push(&format!("{p}.concat"), LayerKind::Concat, vec![h, cur], cs);
            }
            if bi + 1 < nblocks {
                let ts = PoolSpec::AVG_2S2.output_shape(g.nodes[h].output)?;
                h = g.push(&format!("transition{}", bi + 1), LayerKind::AvgPool(PoolSpec::AVG_2S2), vec![h], ts);
            }
        }
        let fs = g.nodes[h].output;
        let gap = g.push("global_avgpool", LayerKind::GlobalAvgPool, vec![h], Shape::new(batch, fs.c, 1, 1));
        g.push(
            "classifier",
            LayerKind::Linear { in_features: fs.c, out_features: self.config.num_classes },
            vec![gap],
            Shape::new(batch, self.config.num_classes, 1, 1),
        );
        Ok(g.nodes)
    }

    /// One row per architecture-table stage: stem conv, max pool, each
    /// EdgeBlock and transition, and the global-pool classifier.
    pub fn shape_trace(&self) -> Result<Vec<TraceRow>> {
        let nodes = self.graph(1)?;
        let find = |name: &str| {
            nodes
                .iter()
                .find(|n| n.name == name)
                .map(|n| n.output)
                .ok_or_else(|| Error::Config(format!("graph lacks `{name}`")))
        };
        let block_op = match self.config.variant {
            Variant::Dense => "3x3 conv",
            Variant::Grouped => "3x3 L-conv",
        };
        let mut rows = vec![
            TraceRow { layer: "Convolution".into(), operator: "3x3 conv, pad=1, bias=True".into(), output: find("stem.relu")? },
            TraceRow { layer: "Pooling".into(), operator: "3x3 max pool, stride=2".into(), output: find("stem.maxpool")? },
        ];
        let nblocks = self.blocks.len();
        for (bi, layers) in self.blocks.iter().enumerate() {
            let last = layers.len() - 1;
            rows.push(TraceRow {
                layer: format!("EdgeBlock ({})", bi + 1),
                operator: format!("[{block_op}, {block_op}] x {}", layers.len()),
                output: find(&format!("block{}.layer{last}.concat", bi + 1))?,
            });
            if bi + 1 < nblocks {
                rows.push(TraceRow {
                    layer: format!("Transition Layer ({})", bi + 1),
                    operator: "2x2 average pool, stride=2".into(),
                    output: find(&format!("transition{}", bi + 1))?,
                });
            }
        }
        rows.push(TraceRow {
            layer: "Classification".into(),
            operator: format!(
                "global average pool, {}D fully-connected, softmax",
                self.config.feature_width()
            ),
            output: find("global_avgpool")?,
        });
        Ok(rows)
    }

    /// Serializable state: parameters, batch-norm statistics, masks and stages.
    /// With `grouped_export`, fully condensed learned layers are written in
    /// packed grouped form instead of masked dense form.
    pub fn to_records(&self, grouped_export: bool) -> Result<Vec<Record>> {
        fn bn<T: Element>(out: &mut Vec<Record>, p: &str, s: &BatchNormState<T>) {
            out.push(Record::tensor(format!("{p}.gamma"), &s.gamma));
            out.push(Record::tensor(format!("{p}.beta"), &s.beta));
            out.push(Record::vector(format!("{p}.running_mean"), &s.running_mean));
            out.push(Record::vector(format!("{p}.running_var"), &s.running_var));
        }
        fn conv<T: Element>(out: &mut Vec<Record>, p: &str, c: &BlockConv<T>, export: bool) -> Result<()> {
            match c {
                BlockConv::Plain(c) => {
                    out.push(Record::tensor(format!("{p}.weight"), &c.weight));
                    out.push(Record::tensor(format!("{p}.bias"), &c.bias));
                }
                BlockConv::Learned(l) if export => {
                    let ex = l.export_grouped()?;
                    out.push(Record::tensor(format!("{p}.packed_weight"), &ex.weight));
                    out.push(Record::vector(format!("{p}.bias"), &ex.bias));
                    out.push(Record::indices(format!("{p}.indices"), &ex.indices));
                }
                BlockConv::Learned(l) => {
                    out.push(Record::tensor(format!("{p}.weight"), &l.weight));
                    out.push(Record::tensor(format!("{p}.bias"), &l.bias));
                    let s = l.spec();
                    out.push(Record::bytes(
                        format!("{p}.mask"),
                        vec![s.out_channels, s.in_channels],
                        l.mask().iter().map(|&m| m as u8).collect(),
                    ));
                    out.push(Record::bytes(format!("{p}.stage"), vec![1], vec![l.stage() as u8]));
                }
            }
            Ok(())
        }

        if grouped_export && !self.is_fully_condensed() {
            return Err(Error::Condense("grouped export requires every learned layer fully condensed".into()));
        }
        let mut out = vec![
            Record::tensor("stem.conv.weight", &self.stem.weight),
            Record::tensor("stem.conv.bias", &self.stem.bias),
        ];
        bn(&mut out, "stem.bn", &self.stem_bn);
        for (bi, layers) in self.blocks.iter().enumerate() {
            for (li, layer) in layers.iter().enumerate() {
                let p = format!("block{}.layer{li}", bi + 1);
                conv(&mut out, &format!("{p}.conv1"), &layer.conv1, grouped_export)?;
                bn(&mut out, &format!("{p}.bn1"), &layer.bn1);
                conv(&mut out, &format!("{p}.conv2"), &layer.conv2, grouped_export)?;
                bn(&mut out, &format!("{p}.bn2"), &layer.bn2);
            }
        }
        out.push(Record::tensor("classifier.weight", &self.classifier_weight));
        out.push(Record::tensor("classifier.bias", &self.classifier_bias));
        Ok(out)
    }

    /// Rebuilds a model from `config` and the records in `ck`. Every stored
    /// shape is checked against the architecture.
    pub fn from_checkpoint(config: &ModelConfig, ck: &Checkpoint) -> Result<Self> {
        fn bn<T: Element>(ck: &Checkpoint, p: &str, s: &mut BatchNormState<T>) -> Result<()> {
            let c = s.channels();
            s.gamma = ck.record(&format!("{p}.gamma"))?.to_tensor(s.gamma.shape())?;
            s.beta = ck.record(&format!("{p}.beta"))?.to_tensor(s.beta.shape())?;
            for (field, dst) in [("running_mean", &mut s.running_mean), ("running_var", &mut s.running_var)] {
                let r = ck.record(&format!("{p}.{field}"))?;
                if r.dims != [c] {
                    return Err(Error::Format(format!("`{p}.{field}` has dims {:?}, expected [{c}]", r.dims)));
                }
                *dst = r.to_vec()?;
            }
            s.validate()
        }
        fn conv<T: Element>(ck: &Checkpoint, p: &str, c: &mut BlockConv<T>) -> Result<()> {
            match c {
                BlockConv::Plain(c) => {
                    c.weight = ck.record(&format!("{p}.weight"))?.to_tensor(c.weight.shape())?;
                    c.bias = ck.record(&format!("{p}.bias"))?.to_tensor(c.bias.shape())?;
                }
                BlockConv::Learned(l) => {
                    let spec = *l.spec();
                    if let Some(packed) = ck.try_record(&format!("{p}.packed_weight")) {
                        let indices = ck.record(&format!("{p}.indices"))?.to_indices()?;
                        let groups = l.groups();
                        if indices.len() % groups != 0 {
                            return Err(Error::Format(format!("`{p}.indices` not divisible into {groups} groups")));
                        }
                        let gspec = ConvSpec {
                            in_channels: indices.len(),
                            groups,
                            ..spec
                        };
                        let ex = GroupedExport {
                            weight: packed.to_tensor(gspec.weight_shape())?,
                            bias: ck.record(&format!("{p}.bias"))?.to_vec()?,
                            indices,
                            spec: gspec,
                        };
                        if ex.bias.len() != spec.out_channels {
                            return Err(Error::Format(format!("`{p}.bias` length")));
                        }
                        *l = LearnedGroupConv::from_export(&ex, spec.in_channels, l.condensation())?;
                    } else {
                        let weight = ck.record(&format!("{p}.weight"))?.to_tensor(spec.weight_shape())?;
                        let bias = ck.record(&format!("{p}.bias"))?.to_tensor(l.bias.shape())?;
                        let mrec = ck.record(&format!("{p}.mask"))?;
                        if mrec.dims != [spec.out_channels, spec.in_channels] {
                            return Err(Error::Format(format!("`{p}.mask` has dims {:?}", mrec.dims)));
                        }
                        let mask = mrec.to_bytes()?.iter().map(|&b| b != 0).collect();
                        let stage = *ck.record(&format!("{p}.stage"))?.to_bytes()?.first().unwrap_or(&0) as usize;
                        *l = LearnedGroupConv::from_parts(spec, l.groups(), l.condensation(), stage, weight, bias, mask)?;
                    }
                }
            }
            Ok(())
        }

        let mut m = Model::build(config, 0)?;
        m.stem.weight = ck.record("stem.conv.weight")?.to_tensor(m.stem.weight.shape())?;
        m.stem.bias = ck.record("stem.conv.bias")?.to_tensor(m.stem.bias.shape())?;
        bn(ck, "stem.bn", &mut m.stem_bn)?;
        for (bi, layers) in m.blocks.iter_mut().enumerate() {
            for (li, layer) in layers.iter_mut().enumerate() {
                let p = format!("block{}.layer{li}", bi + 1);
                conv(ck, &format!("{p}.conv1"), &mut layer.conv1)?;
                bn(ck, &format!("{p}.bn1"), &mut layer.bn1)?;
                conv(ck, &format!("{p}.conv2"), &mut layer.conv2)?;
                bn(ck, &format!("{p}.bn2"), &mut layer.bn2)?;
            }
        }
        m.classifier_weight = ck.record("classifier.weight")?.to_tensor(m.classifier_weight.shape())?;
        m.classifier_bias = ck.record("classifier.bias")?.to_tensor(m.classifier_bias.shape())?;
        Ok(m)
    }
}

#[derive(Default)]
struct GraphBuilder {
    nodes: Vec<LayerNode>,
}

impl GraphBuilder {
    fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<usize>, output: Shape) -> usize {
        self.nodes.push(LayerNode {
            name: name.to_string(),
            kind,
            inputs,
            output,
        });
        self.nodes.len() - 1
    }
}

#[cfg(test)]
mod tests;
