//! Parameter, MAC, activation-memory and timing accounting.
//!
//! MACs count one multiply-accumulate each; pooling, batch norm and ReLU are
//! tallied separately as elementwise operations.

mod bench;
mod memory;
mod report;

pub use bench::{bench_forward, bench_grouped_vs_dense, cpu_model, GroupedBenchRow, TimingStats, EDGEBLOCK_SHAPES, MIN_RUNS};
pub use memory::{activation_memory, ActivationProfile, LiveStep, BYTES_PER_ELEMENT};
pub use report::{cost_report, CostReport, DEVICE_MEMORY_BYTES, REFERENCE_MACS, REFERENCE_MACS_GROUPED, REFERENCE_PARAMS};

use crate::error::Result;
use crate::model::{LayerKind, LayerNode, Model};
use crate::nnops::ConvSpec;
use crate::tensor::Element;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub op: &'static str,
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
}

/// Per-layer tally plus total.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tally {
    pub layers: Vec<(String, u64)>,
    pub total: u64,
}

fn conv_effective_inputs(spec: &ConvSpec, kind: &LayerKind) -> u64 {
    match kind {
        LayerKind::Conv { learned: Some(l), .. } if l.fully_condensed() => l.alive_per_group as u64,
        _ => spec.in_per_group() as u64,
    }
}

/// Cost of one graph node at the node's batch size.
pub fn node_cost(node: &LayerNode, inputs: &[&LayerNode]) -> LayerCost {
    let out = node.output;
    let numel = out.numel() as u64;
    let (op, params, macs, elementwise) = match &node.kind {
        LayerKind::Input => ("input", 0, 0, 0),
        LayerKind::Conv { spec, .. } => {
            let fan = conv_effective_inputs(spec, &node.kind) * (spec.kernel.0 * spec.kernel.1) as u64;
            let o = spec.out_channels as u64;
            let bias = if spec.bias { o } else { 0 };
            ("conv", o * fan + bias, numel * fan, 0)
        }
        LayerKind::BatchNorm { channels } => ("batchnorm", 2 * *channels as u64, 0, numel),
        LayerKind::Relu => ("relu", 0, 0, numel),
        LayerKind::MaxPool(p) => ("maxpool", 0, 0, numel * (p.window * p.window) as u64),
        LayerKind::AvgPool(p) => ("avgpool", 0, 0, numel * (p.window * p.window) as u64),
        LayerKind::Concat => ("concat", 0, 0, 0),
        LayerKind::GlobalAvgPool => ("global_avgpool", 0, 0, inputs.first().map_or(0, |i| i.output.numel() as u64)),
        LayerKind::Linear { in_features, out_features } => {
            let (i, o) = (*in_features as u64, *out_features as u64);
            ("linear", o * i + o, out.n as u64 * o * i, 0)
        }
    };
    LayerCost {
        name: node.name.clone(),
        op,
        params,
        macs,
        elementwise,
    }
}

/// Costs for every graph node of a single-image forward pass.
pub fn layer_costs<T: Element>(model: &Model<T>) -> Result<Vec<LayerCost>> {
    let nodes = model.graph(1)?;
    Ok(nodes
        .iter()
        .map(|n| {
            let ins: Vec<&LayerNode> = n.inputs.iter().map(|&i| &nodes[i]).collect();
            node_cost(n, &ins)
        })
        .collect())
}

fn tally(costs: &[LayerCost], pick: impl Fn(&LayerCost) -> u64) -> Tally {
    let layers: Vec<(String, u64)> = costs.iter().filter(|c| pick(c) > 0).map(|c| (c.name.clone(), pick(c))).collect();
    let total = layers.iter().map(|(_, v)| v).sum();
    Tally { layers, total }
}

/// Learnable parameters. Fully condensed learned layers count alive weights only.
pub fn count_params<T: Element>(model: &Model<T>) -> Result<Tally> {
    Ok(tally(&layer_costs(model)?, |c| c.params))
}

/// Multiply-accumulates for one image at the configured input size.
pub fn count_macs<T: Element>(model: &Model<T>) -> Result<Tally> {
    Ok(tally(&layer_costs(model)?, |c| c.macs))
}

/// Batch-norm running statistics (mean and variance), not learnable.
pub fn count_running_stats<T: Element>(model: &Model<T>) -> Result<u64> {
    Ok(model
        .graph(1)?
        .iter()
        .map(|n| match n.kind {
            LayerKind::BatchNorm { channels } => 2 * channels as u64,
            _ => 0,
        })
        .sum())
}
