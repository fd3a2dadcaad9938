use crate::error::Result;
use crate::model::{LayerNode, Model};
use crate::tensor::Element;

pub const BYTES_PER_ELEMENT: u64 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiveStep {
    pub layer: String,
    /// Bytes live while this layer runs (its inputs and its output).
    pub live_bytes: u64,
    /// Producers whose last consumer is this layer.
    pub freed: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationProfile {
    pub peak_bytes: u64,
    pub peak_layer: String,
    pub param_bytes: u64,
    pub timeline: Vec<LiveStep>,
}

/// Step after which each node's output is no longer needed. The final
/// output stays live to the end.
pub(crate) fn last_uses(nodes: &[LayerNode]) -> Vec<usize> {
    let mut last: Vec<usize> = (0..nodes.len()).collect();
    for (t, n) in nodes.iter().enumerate() {
        for &i in &n.inputs {
            last[i] = last[i].max(t);
        }
    }
    if let Some(l) = last.last_mut() {
        *l = nodes.len() - 1;
    }
    last
}

/// Executes the graph in order, allocating each output when its layer runs
/// and releasing it after its last consumer.
pub fn simulate(nodes: &[LayerNode]) -> Vec<LiveStep> {
    let last = last_uses(nodes);
    let mut live = 0u64;
    let mut steps = Vec::with_capacity(nodes.len());
    let mut by_step: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, &t) in last.iter().enumerate() {
        by_step[t].push(i);
    }
    for (t, n) in nodes.iter().enumerate() {
        live += n.output.numel() as u64 * BYTES_PER_ELEMENT;
        let here = live;
        let freed = std::mem::take(&mut by_step[t]);
        if t + 1 < nodes.len() {
            for &i in &freed {
                live -= nodes[i].output.numel() as u64 * BYTES_PER_ELEMENT;
            }
        }
        steps.push(LiveStep {
            layer: n.name.clone(),
            live_bytes: here,
            freed,
        });
    }
    steps
}

pub fn activation_memory<T: Element>(model: &Model<T>, batch: usize) -> Result<ActivationProfile> {
    let nodes = model.graph(batch)?;
    let timeline = simulate(&nodes);
    let (peak_at, peak) = timeline
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.live_bytes))
        .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(ActivationProfile {
        peak_bytes: peak,
        peak_layer: timeline.get(peak_at).map(|s| s.layer.clone()).unwrap_or_default(),
        param_bytes: super::count_params(model)?.total * BYTES_PER_ELEMENT,
        timeline,
    })
}
