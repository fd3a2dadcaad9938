use std::fmt::Write as _;

use super::{activation_memory, count_running_stats, layer_costs, ActivationProfile, LayerCost, TimingStats};
use crate::error::Result;
use crate::model::{Model, Variant};
use crate::tensor::Element;

/// Published reference figures the counts are compared against.
pub const REFERENCE_PARAMS: f64 = 0.40e6;
pub const REFERENCE_MACS: f64 = 52.28e6;
pub const REFERENCE_MACS_GROUPED: f64 = 2.7e6;
/// Total memory of the reference edge device (875 MiB).
pub const DEVICE_MEMORY_BYTES: u64 = 875 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub arch: String,
    pub input: (usize, usize, usize),
    pub fully_condensed: bool,
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_macs: u64,
    pub total_elementwise: u64,
    pub running_stats: u64,
    pub activation: ActivationProfile,
    pub timing: Option<TimingStats>,
    pub notes: Vec<String>,
}

impl CostReport {
    /// Peak activations plus parameters as a fraction of device memory.
    pub fn memory_percent(&self) -> f64 {
        100.0 * (self.activation.peak_bytes + self.activation.param_bytes) as f64 / DEVICE_MEMORY_BYTES as f64
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let (h, w, c) = self.input;
        let _ = writeln!(s, "{} cost report (input {h}x{w}x{c}, batch 1)", self.arch);
        let _ = writeln!(s, "{:<28} {:<15} {:>10} {:>12} {:>12}", "layer", "op", "params", "macs", "elementwise");
        for l in self.layers.iter().filter(|l| l.params + l.macs + l.elementwise > 0) {
            let _ = writeln!(s, "{:<28} {:<15} {:>10} {:>12} {:>12}", l.name, l.op, l.params, l.macs, l.elementwise);
        }
        let _ = writeln!(
            s,
            "{:<28} {:<15} {:>10} {:>12} {:>12}",
            "total", "", self.total_params, self.total_macs, self.total_elementwise
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "params            {} ({:.3} M)", self.total_params, self.total_params as f64 / 1e6);
        let _ = writeln!(s, "macs              {} ({:.2} M)", self.total_macs, self.total_macs as f64 / 1e6);
        let _ = writeln!(s, "running stats     {}", self.running_stats);
        let _ = writeln!(
            s,
            "peak activations  {} bytes at {}",
            self.activation.peak_bytes, self.activation.peak_layer
        );
        let _ = writeln!(s, "parameter bytes   {}", self.activation.param_bytes);
        let _ = writeln!(s, "device memory     {:.4}% of 875 MiB", self.memory_percent());
        if let Some(t) = &self.timing {
            let _ = writeln!(
                s,
                "forward           median {:.3} ms, p10 {:.3} ms, p90 {:.3} ms over {} runs; {:.1} fps ({} threads, {})",
                t.median_ms, t.p10_ms, t.p90_ms, t.runs, t.fps, t.threads, t.cpu
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }

    pub fn render_json(&self) -> String {
        let mut kv: Vec<(String, String)> = vec![
            ("arch".into(), format!("\"{}\"", self.arch)),
            ("input".into(), format!("[{}, {}, {}]", self.input.0, self.input.1, self.input.2)),
            ("fully_condensed".into(), self.fully_condensed.to_string()),
            ("params".into(), self.total_params.to_string()),
            ("macs".into(), self.total_macs.to_string()),
            ("elementwise_ops".into(), self.total_elementwise.to_string()),
            ("running_stats".into(), self.running_stats.to_string()),
            ("peak_activation_bytes".into(), self.activation.peak_bytes.to_string()),
            ("peak_layer".into(), format!("\"{}\"", self.activation.peak_layer)),
            ("param_bytes".into(), self.activation.param_bytes.to_string()),
            ("memory_percent".into(), format!("{:.6}", self.memory_percent())),
        ];
        if let Some(t) = &self.timing {
            kv.extend([
                ("runs".into(), t.runs.to_string()),
                ("median_ms".into(), t.median_ms.to_string()),
                ("p10_ms".into(), t.p10_ms.to_string()),
                ("p90_ms".into(), t.p90_ms.to_string()),
                ("fps".into(), t.fps.to_string()),
                ("threads".into(), t.threads.to_string()),
                ("cpu".into(), format!("{:?}", t.cpu)),
            ]);
        }
        let layers: Vec<String> = self
            .layers
            .iter()
            .filter(|l| l.params + l.macs + l.elementwise > 0)
            .map(|l| {
                format!(
                    "{{\"name\": \"{}\", \"op\": \"{}\", \"params\": {}, \"macs\": {}, \"elementwise\": {}}}",
                    l.name, l.op, l.params, l.macs, l.elementwise
                )
            })
            .collect();
        kv.push(("layers".into(), format!("[\n    {}\n  ]", layers.join(",\n    "))));
        let notes: Vec<String> = self.notes.iter().map(|n| format!("{n:?}")).collect();
        kv.push(("notes".into(), format!("[{}]", notes.join(", "))));
        let body: Vec<String> = kv.iter().map(|(k, v)| format!("  \"{k}\": {v}")).collect();
        format!("{{\n{}\n}}\n", body.join(",\n"))
    }
}

fn deviation(count: u64, reference: f64) -> f64 {
    100.0 * (count as f64 - reference) / reference
}

/// Static costs for `model`; timing is attached by the caller when measured.
pub fn cost_report<T: Element>(model: &Model<T>) -> Result<CostReport> {
    let layers = layer_costs(model)?;
    let total_params = layers.iter().map(|l| l.params).sum();
    let total_macs = layers.iter().map(|l| l.macs).sum();
    let total_elementwise = layers.iter().map(|l| l.elementwise).sum();
    let mut notes = vec!["MACs count one multiply-accumulate each; pooling, batch norm and ReLU are excluded from the MAC total".to_string()];
    match model.config.variant {
        Variant::Dense => notes.push(format!(
            "reference: {:.2} M params ({:+.1}%), {:.2} M MACs ({:+.1}%)",
            REFERENCE_PARAMS / 1e6,
            deviation(total_params, REFERENCE_PARAMS),
            REFERENCE_MACS / 1e6,
            deviation(total_macs, REFERENCE_MACS)
        )),
        Variant::Grouped => {
            if !model.is_fully_condensed() {
                notes.push("learned layers not fully condensed: dense storage and dense MACs counted".into());
            }
            notes.push(format!(
                "reference lists {:.1} M FLOPs for the grouped variant; analytic counting gives {:.2} M MACs ({:.1}x the reference); the reference figure is not reproduced",
                REFERENCE_MACS_GROUPED / 1e6,
                total_macs as f64 / 1e6,
                total_macs as f64 / REFERENCE_MACS_GROUPED
            ));
        }
    }
    let (h, w, c) = model.config.input_size;
    Ok(CostReport {
        arch: model.config.variant.arch_name().to_string(),
        input: (h, w, c),
        fully_condensed: model.is_fully_condensed(),
        layers,
        total_params,
        total_macs,
        total_elementwise,
        running_stats: count_running_stats(model)?,
        activation: activation_memory(model, 1)?,
        timing: None,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn dense_totals_near_reference() {
        let r = cost_report(&Model::<f32>::build(&ModelConfig::default(), 0).unwrap()).unwrap();
        assert_eq!(r.total_params, 418_551);
        assert_eq!(r.total_macs, 48_827_432);
        assert!(deviation(r.total_params, REFERENCE_PARAMS).abs() <= 5.0);
        assert!(deviation(r.total_macs, REFERENCE_MACS).abs() <= 10.0);
        assert!(r.render_text().contains("418551"));
        assert!(r.render_json().contains("\"macs\": 48827432"));
    }

    #[test]
    fn grouped_report_carries_discrepancy_note() {
        let r = cost_report(&Model::<f32>::build(&ModelConfig::for_variant(Variant::Grouped), 0).unwrap()).unwrap();
        assert!(r.notes.iter().any(|n| n.contains("2.7 M")));
    }
}
