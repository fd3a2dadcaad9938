use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nnops::{conv2d, ConvSpec};
use crate::tensor::{Element, Tensor};

pub const MIN_RUNS: usize = 30;
const WARMUP_RUNS: usize = 3;
/// Shortest total sample duration accepted before the run count is raised.
const MIN_SAMPLE: Duration = Duration::from_millis(20);
const MAX_RUNS: usize = 100_000;

/// `(in_channels, out_channels, h, w)` at the first-layer widths of each EdgeBlock.
pub const EDGEBLOCK_SHAPES: [(usize, usize, usize, usize); 3] = [(64, 32, 22, 22), (96, 32, 11, 11), (144, 32, 5, 5)];

#[derive(Clone, Debug, PartialEq)]
pub struct TimingStats {
    pub runs: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub fps: f64,
    pub threads: usize,
    pub cpu: String,
}

pub fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Times `f` at least `runs` times (never fewer than [`MIN_RUNS`]) after a
/// warm-up, raising the count when the sample is too short for the clock.
pub(crate) fn time_runs(runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<TimingStats> {
    for _ in 0..WARMUP_RUNS {
        f()?;
    }
    let mut runs = runs.max(MIN_RUNS);
    let mut samples;
    loop {
        samples = Vec::with_capacity(runs);
        let start = Instant::now();
        for _ in 0..runs {
            let t = Instant::now();
            f()?;
            samples.push(t.elapsed().as_secs_f64() * 1e3);
        }
        if start.elapsed() >= MIN_SAMPLE || runs >= MAX_RUNS {
            break;
        }
        runs = (runs * 4).min(MAX_RUNS);
    }
    samples.sort_by(f64::total_cmp);
    let median = percentile(&samples, 0.5);
    Ok(TimingStats {
        runs,
        median_ms: median,
        p10_ms: percentile(&samples, 0.1),
        p90_ms: percentile(&samples, 0.9),
        fps: 1000.0 / median,
        threads: rayon::current_num_threads(),
        cpu: cpu_model(),
    })
}

/// Single-image forward latency. Data preparation is outside the timed region.
pub fn bench_forward<T: Element>(model: &Model<T>, runs: usize, seed: u64) -> Result<TimingStats> {
    let x = random_tensor(model.input_shape(1), seed);
    time_runs(runs, || model.predict(&x).map(|_| ()))
}

fn random_tensor<T: Element>(shape: crate::tensor::Shape, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64_lossy(StandardNormal.sample(&mut rng)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupedBenchRow {
    pub in_channels: usize,
    pub out_channels: usize,
    pub h: usize,
    pub w: usize,
    pub groups: usize,
    pub macs: u64,
    /// Weights read, input read and output written, in bytes.
    pub bytes: u64,
    /// MACs per byte.
    pub intensity: f64,
    pub median_ms: f64,
    /// Wall time relative to `groups = 1` at the same shape.
    pub time_ratio: f64,
    pub mac_ratio: f64,
}

/// 3x3 same-padding convolution at each shape for every group count, timed in f32.
pub fn bench_grouped_vs_dense(
    shapes: &[(usize, usize, usize, usize)],
    groups: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<GroupedBenchRow>> {
    if groups.first() != Some(&1) {
        return Err(Error::Config("group list must start with 1 (the dense baseline)".into()));
    }
    let mut rows = Vec::new();
    for &(cin, cout, h, w) in shapes {
        let x: Tensor<f32> = random_tensor(crate::tensor::Shape::new(1, cin, h, w), seed);
        let mut base: Option<(f64, u64)> = None;
        for &g in groups {
            let spec = ConvSpec::same3x3(cin, cout).with_groups(g);
            spec.validate()?;
            let weight: Tensor<f32> = random_tensor(spec.weight_shape(), seed ^ g as u64);
            let bias = vec![0f32; cout];
            let stats = time_runs(runs, || conv2d(&x, &spec, &weight, Some(&bias)).map(|_| ()))?;
            let macs = spec.macs(h, w)?;
            let bytes = 4 * (spec.weight_shape().numel() + cin * h * w + cout * h * w) as u64;
            let (t0, m0) = *base.get_or_insert((stats.median_ms, macs));
            rows.push(GroupedBenchRow {
                in_channels: cin,
                out_channels: cout,
                h,
                w,
                groups: g,
                macs,
                bytes,
                intensity: macs as f64 / bytes as f64,
                median_ms: stats.median_ms,
                time_ratio: stats.median_ms / t0,
                mac_ratio: macs as f64 / m0 as f64,
            });
        }
    }
    Ok(rows)
}
