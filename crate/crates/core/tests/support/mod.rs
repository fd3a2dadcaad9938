//! Finite-difference gradient checks shared by the gradient suite and the
//! acceptance harness.
#![allow(dead_code)]

use edgecnn::lgc::LearnedGroupConv;
use edgecnn::nnops::*;
use edgecnn::tensor::{concat_channels, index_select_channels, index_select_channels_backward, split_channels};
use edgecnn::{Mode, Model, ModelConfig, Shape, Tensor};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const SHAPES_PER_OP: usize = 5;
/// Probe for the whole network, where a parameter nudge moves thousands of
/// units and a wider step would cross ReLU and max-pool kinks.
pub const MODEL_STEP: f64 = 1e-7;

/// Worst relative error seen by one operator check, over all its shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpCheck {
    pub shapes: usize,
    pub worst: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.shapes >= SHAPES_PER_OP && self.worst < TOLERANCE
    }
}

pub type OpFn = fn(u64) -> OpCheck;

pub const OPERATORS: &[(&str, OpFn)] = &[
    ("conv2d", conv_dense),
    ("grouped conv2d", conv_grouped),
    ("masked learned group conv", lgc_masked),
    ("batch norm (train)", batch_norm),
    ("relu", relu_op),
    ("max pool 3x3/2", max_pool),
    ("avg pool 2x2/2", avg_pool),
    ("global avg pool", global_pool),
    ("linear", linear_op),
    ("softmax cross-entropy", softmax_ce),
    ("channel concat", concat_op),
    ("channel index-select", index_select_op),
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| StandardNormal.sample(rng))
}

/// `||a - n|| / max(||a||, ||n||)`, zero when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at every coordinate of `x`.
pub fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.data().len())
        .map(|i| {
            let v = probe.data()[i];
            probe.data_mut()[i] = v + STEP;
            let up = f(&probe);
            probe.data_mut()[i] = v - STEP;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn slice_err(analytic: &[f64], x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> f64 {
    rel_err(analytic, &numeric_grad(x, f))
}

fn conv_case(spec: ConvSpec, n: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> f64 {
    let x = randn(Shape::new(n, spec.in_channels, h, w), r);
    let wt = randn(spec.weight_shape(), r);
    let b: Vec<f64> = (0..spec.out_channels).map(|_| StandardNormal.sample(r)).collect();
    let out_shape = spec.output_shape(x.shape()).unwrap();
    let up = randn(out_shape, r);
    let g = conv2d_backward(&x, &spec, &wt, &up).unwrap();
    let loss = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &[f64]| dot(&conv2d(x, &spec, wt, Some(b)).unwrap(), &up);
    let bias_t = Tensor::from_vec(Shape::new(1, spec.out_channels, 1, 1), b.clone()).unwrap();
    slice_err(g.input.data(), &x, |x| loss(x, &wt, &b))
        .max(slice_err(g.weight.data(), &wt, |wt| loss(&x, wt, &b)))
        .max(slice_err(g.bias.as_deref().unwrap(), &bias_t, |bt| loss(&x, &wt, bt.data())))
}

fn random_conv_spec(r: &mut ChaCha8Rng, groups: usize) -> ConvSpec {
    let k = *[1, 3].choose(r).unwrap();
    ConvSpec {
        in_channels: groups * r.random_range(1..=3),
        out_channels: groups * r.random_range(1..=3),
        kernel: (k, k),
        stride: r.random_range(1..=2),
        pad: r.random_range(0..=1),
        groups,
        bias: true,
    }
}

pub fn conv_dense(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let spec = random_conv_spec(&mut r, 1);
            let (n, h, w) = (r.random_range(1..=2), r.random_range(3..=7), r.random_range(3..=7));
            conv_case(spec, n, h, w, &mut r)
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn conv_grouped(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let g = r.random_range(2..=4);
            let spec = random_conv_spec(&mut r, g);
            let (n, h, w) = (r.random_range(1..=2), r.random_range(3..=6), r.random_range(3..=6));
            conv_case(spec, n, h, w, &mut r)
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn lgc_masked(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let groups = *[2, 4].choose(&mut r).unwrap();
            let c = *[2, 4].choose(&mut r).unwrap();
            let (cin, cout) = (c * r.random_range(1..=3), groups * r.random_range(1..=2));
            let mut l = LearnedGroupConv::<f64>::new(cin, cout, groups, c, &mut r).unwrap();
            l.bias = randn(l.bias.shape(), &mut r);
            for _ in 0..r.random_range(1..c) {
                l.condense().unwrap();
            }
            let (n, h, w) = (r.random_range(1..=2), r.random_range(3..=5), r.random_range(3..=5));
            let x = randn(Shape::new(n, cin, h, w), &mut r);
            let up = randn(Shape::new(n, cout, h, w), &mut r);
            let g = l.backward(&x, &up).unwrap();
            let with = |f: &dyn Fn(&mut LearnedGroupConv<f64>)| {
                let mut m = l.clone();
                f(&mut m);
                m
            };
            let e_in = slice_err(g.input.data(), &x, |x| dot(&l.forward(x).unwrap(), &up));
            let e_w = slice_err(g.weight.data(), &l.weight, |wt| {
                let m = with(&|m| m.weight = wt.clone());
                dot(&m.forward(&x).unwrap(), &up)
            });
            let e_b = slice_err(g.bias.as_deref().unwrap(), &l.bias, |b| {
                let m = with(&|m| m.bias = b.clone());
                dot(&m.forward(&x).unwrap(), &up)
            });
            e_in.max(e_w).max(e_b)
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn batch_norm(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let s = Shape::new(r.random_range(2..=3), r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=4));
            let mut st = BatchNormState::<f64>::new(s.c);
            st.gamma = randn(st.gamma.shape(), &mut r);
            st.beta = randn(st.beta.shape(), &mut r);
            let x = randn(s, &mut r);
            let up = randn(s, &mut r);
            let (_, cache) = batchnorm_train(&x, &mut st.clone()).unwrap();
            let g = batchnorm_backward(&up, &cache, st.gamma.data()).unwrap();
            let loss = |x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>| {
                let mut s2 = st.clone();
                s2.gamma = gamma.clone();
                s2.beta = beta.clone();
                dot(&batchnorm_train(x, &mut s2).unwrap().0, &up)
            };
            slice_err(g.input.data(), &x, |x| loss(x, &st.gamma, &st.beta))
                .max(slice_err(&g.gamma, &st.gamma, |gm| loss(&x, gm, &st.beta)))
                .max(slice_err(&g.beta, &st.beta, |bt| loss(&x, &st.gamma, bt)))
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

fn random_shape(r: &mut ChaCha8Rng, max_hw: usize) -> Shape {
    Shape::new(r.random_range(1..=2), r.random_range(1..=3), r.random_range(2..=max_hw), r.random_range(2..=max_hw))
}

pub fn relu_op(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let s = random_shape(&mut r, 6);
            // keep every input well away from the kink
            let x = Tensor::from_fn(s, |_, _, _, _| {
                let v: f64 = StandardNormal.sample(&mut r);
                if v.abs() < 1e-2 { 0.5 } else { v }
            });
            let up = randn(s, &mut r);
            let g = relu_backward(&up, &x).unwrap();
            slice_err(g.data(), &x, |x| dot(&relu(x), &up))
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn max_pool(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let s = random_shape(&mut r, 8);
            // distinct values spaced far beyond the probe step, so no ties
            let mut vals: Vec<f64> = (0..s.numel()).map(|i| i as f64 * 1e-2).collect();
            vals.shuffle(&mut r);
            let x = Tensor::from_vec(s, vals).unwrap();
            let (y, arg) = maxpool2d(&x, PoolSpec::MAX_3S2).unwrap();
            let up = randn(y.shape(), &mut r);
            let g = maxpool2d_backward(&up, &arg, s).unwrap();
            slice_err(g.data(), &x, |x| dot(&maxpool2d(x, PoolSpec::MAX_3S2).unwrap().0, &up))
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn avg_pool(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let s = random_shape(&mut r, 9);
            let x = randn(s, &mut r);
            let y = avgpool2d(&x, PoolSpec::AVG_2S2).unwrap();
            let up = randn(y.shape(), &mut r);
            let g = avgpool2d_backward(&up, PoolSpec::AVG_2S2, s).unwrap();
            slice_err(g.data(), &x, |x| dot(&avgpool2d(x, PoolSpec::AVG_2S2).unwrap(), &up))
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn global_pool(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let s = random_shape(&mut r, 6);
            let x = randn(s, &mut r);
            let up = randn(Shape::new(s.n, s.c, 1, 1), &mut r);
            let g = global_avgpool_backward(&up, s).unwrap();
            slice_err(g.data(), &x, |x| dot(&global_avgpool(x), &up))
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn linear_op(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let (n, f, o) = (r.random_range(1..=3), r.random_range(1..=6), r.random_range(1..=5));
            let x = randn(Shape::new(n, f, 1, 1), &mut r);
            let wt = randn(linear_weight_shape(f, o), &mut r);
            let b = randn(Shape::new(1, o, 1, 1), &mut r);
            let up = randn(Shape::new(n, o, 1, 1), &mut r);
            let g = linear_backward(&x, &wt, &up).unwrap();
            let loss = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| dot(&linear(x, wt, b.data()).unwrap(), &up);
            slice_err(g.input.data(), &x, |x| loss(x, &wt, &b))
                .max(slice_err(g.weight.data(), &wt, |wt| loss(&x, wt, &b)))
                .max(slice_err(&g.bias, &b, |b| loss(&x, &wt, b)))
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn softmax_ce(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let (n, k) = (r.random_range(1..=4), r.random_range(2..=7));
            let x = randn(Shape::new(n, k, 1, 1), &mut r);
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
            let (_, probs) = softmax_cross_entropy(&x, &labels).unwrap();
            let g = softmax_cross_entropy_backward(&probs, &labels).unwrap();
            slice_err(g.data(), &x, |x| softmax_cross_entropy(x, &labels).unwrap().0)
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn concat_op(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let base = random_shape(&mut r, 5);
            let widths: Vec<usize> = (0..r.random_range(2..=3)).map(|_| r.random_range(1..=4)).collect();
            let parts: Vec<Tensor<f64>> = widths.iter().map(|&c| randn(base.with_channels(c), &mut r)).collect();
            let up = randn(base.with_channels(widths.iter().sum()), &mut r);
            let grads = split_channels(&up, &widths).unwrap();
            (0..parts.len())
                .map(|i| {
                    slice_err(grads[i].data(), &parts[i], |p| {
                        let mut ps: Vec<&Tensor<f64>> = parts.iter().collect();
                        ps[i] = p;
                        dot(&concat_channels(&ps).unwrap(), &up)
                    })
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

pub fn index_select_op(seed: u64) -> OpCheck {
    let mut r = rng(seed);
    let worst = (0..SHAPES_PER_OP)
        .map(|_| {
            let s = random_shape(&mut r, 5).with_channels(r.random_range(2..=6));
            let idx: Vec<usize> = (0..r.random_range(1..=8)).map(|_| r.random_range(0..s.c)).collect();
            let x = randn(s, &mut r);
            let up = randn(s.with_channels(idx.len()), &mut r);
            let g = index_select_channels_backward(&up, &idx, s.c).unwrap();
            slice_err(g.data(), &x, |x| dot(&index_select_channels(x, &idx).unwrap(), &up))
        })
        .fold(0.0, f64::max);
    OpCheck { shapes: SHAPES_PER_OP, worst }
}

/// End-to-end check through the whole network: sampled coordinates of the
/// input and of several parameter tensors, cross-entropy loss, train mode.
pub fn whole_model(seed: u64, samples: usize) -> f64 {
    let mut r = rng(seed);
    let mut model = Model::<f64>::build(&ModelConfig::default(), seed).unwrap();
    let x = randn(model.input_shape(2), &mut r);
    let labels = [2, 5];
    let loss_of = |m: &Model<f64>, x: &Tensor<f64>| {
        let mut m = m.clone();
        let logits = m.forward(x, Mode::Train).unwrap();
        softmax_cross_entropy(&logits, &labels).unwrap().0
    };
    let logits = model.forward(&x, Mode::Train).unwrap();
    let (_, probs) = softmax_cross_entropy(&logits, &labels).unwrap();
    let dx = model.backward(&softmax_cross_entropy_backward(&probs, &labels).unwrap()).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..samples {
        let i = r.random_range(0..x.data().len());
        let mut p = x.clone();
        p.data_mut()[i] += MODEL_STEP;
        let up = loss_of(&model, &p);
        p.data_mut()[i] -= 2.0 * MODEL_STEP;
        let down = loss_of(&model, &p);
        analytic.push(dx.data()[i]);
        numeric.push((up - down) / (2.0 * MODEL_STEP));
    }
    let names = ["classifier.weight", "block3.layer6.conv2.weight", "block1.layer0.conv1.weight", "stem.bn.gamma"];
    for name in names {
        let grads: Vec<f64> = {
            let mut m = model.clone();
            let p = m.params_mut().into_iter().find(|p| p.name == name).unwrap();
            p.tensor.grad().unwrap().to_vec()
        };
        for _ in 0..samples {
            let i = r.random_range(0..grads.len());
            let probe = |delta: f64| {
                let mut m = model.clone();
                let p = m.params_mut().into_iter().find(|p| p.name == name).unwrap();
                p.tensor.data_mut()[i] += delta;
                loss_of(&m, &x)
            };
            analytic.push(grads[i]);
            numeric.push((probe(MODEL_STEP) - probe(-MODEL_STEP)) / (2.0 * MODEL_STEP));
        }
    }
    rel_err(&analytic, &numeric)
}
