use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TABLE_OUTPUTS: [&str; 8] = [
    "44x44x32", "22x22x32", "22x22x64", "11x11x64", "11x11x96", "5x5x96", "5x5x152", "1x1x152",
];

fn random_batch(shape: Shape, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

#[test]
fn trace_matches_architecture_tables() {
    for cfg in [ModelConfig::edgecnn(), ModelConfig::edgecnn_g()] {
        let m = Model::<f32>::build(&cfg, 0).unwrap();
        let rows: Vec<String> = m.shape_trace().unwrap().iter().map(TraceRow::hwc).collect();
        assert_eq!(rows, TABLE_OUTPUTS);
    }
}

#[test]
fn channel_plans() {
    let m = Model::<f32>::build(&ModelConfig::default(), 0).unwrap();
    assert_eq!(m.config.feature_width(), 152);
    assert_eq!(m.blocks[0].last().unwrap().in_channels() + 8, 64);
    let tiny = ModelConfig {
        growth_rate: 1,
        block_lengths: vec![1, 1, 1],
        ..ModelConfig::default()
    };
    let m = Model::<f32>::build(&tiny, 0).unwrap();
    let exits: Vec<usize> = m.shape_trace().unwrap().iter().filter(|r| r.layer.starts_with("EdgeBlock")).map(|r| r.output.c).collect();
    assert_eq!(exits, vec![33, 34, 35]);
}

#[test]
fn edgeblock_layer_shapes() {
    let mut m = Model::<f32>::build(&ModelConfig::default(), 1).unwrap();
    let layer = &mut m.blocks[0][0];
    assert_eq!(layer.conv1.out_channels(), 32);
    let x = random_batch(Shape::new(2, 32, 22, 22), 2);
    let y = layer.forward(&x, Mode::Train).unwrap();
    assert_eq!(y.shape(), Shape::new(2, 40, 22, 22));
    // the input passes through untouched in the first 32 channels
    for n in 0..2 {
        assert_eq!(&y.item(n)[..32 * 484], x.item(n));
    }
}

#[test]
fn forward_shapes_and_determinism() {
    let mut m = Model::<f32>::build(&ModelConfig::default(), 3).unwrap();
    let x = random_batch(Shape::new(1, 3, 44, 44), 4);
    assert_eq!(m.predict(&x).unwrap().shape(), Shape::new(1, 7, 1, 1));
    let pair = concat_batch(&x, &x);
    let y = m.forward(&pair, Mode::Infer).unwrap();
    assert_eq!(y.item(0), y.item(1));
    assert!(m.predict(&Tensor::zeros(Shape::new(1, 3, 40, 44))).is_err());
}

fn concat_batch(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    let s = a.shape();
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::from_vec(Shape::new(s.n + b.shape().n, s.c, s.h, s.w), data).unwrap()
}

#[test]
fn zero_classifier_gives_uniform_softmax() {
    let mut m = Model::<f32>::build(&ModelConfig::default(), 5).unwrap();
    m.classifier_weight = Tensor::zeros(m.classifier_weight.shape());
    let y = m.predict(&Tensor::zeros(Shape::new(1, 3, 44, 44))).unwrap();
    assert!(y.data().iter().all(|&v| v == y.data()[0]));
    let p = crate::nnops::softmax(&y);
    assert!(p.data().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-6));
}

#[test]
fn trace_agrees_with_runtime_shapes() {
    let mut m = Model::<f32>::build(&ModelConfig::edgecnn_g(), 6).unwrap();
    let x = random_batch(Shape::new(2, 3, 44, 44), 7);
    m.forward(&x, Mode::Train).unwrap();
    let cache = m.cache.as_ref().unwrap();
    let trace = m.shape_trace().unwrap();
    assert_eq!(cache.pool_input.with_channels(32), Shape::new(2, 32, 44, 44));
    assert_eq!((trace[0].output.h, trace[0].output.w), (cache.pool_input.h, cache.pool_input.w));
    assert_eq!((trace[2].output.c, trace[2].output.h), (cache.transition_inputs[0].c, cache.transition_inputs[0].h));
    assert_eq!((trace[4].output.c, trace[4].output.h), (cache.transition_inputs[1].c, cache.transition_inputs[1].h));
    assert_eq!((trace[6].output.c, trace[6].output.h), (cache.gap_input.c, cache.gap_input.h));
    assert_eq!(trace[7].output.c, cache.features.shape().c);
}

#[test]
fn layer_list_invariants() {
    for cfg in [ModelConfig::edgecnn(), ModelConfig::edgecnn_g()] {
        let m = Model::<f32>::build(&cfg, 0).unwrap();
        let g = m.graph(1).unwrap();
        for (i, node) in g.iter().enumerate() {
            if let LayerKind::Conv { spec, .. } = node.kind {
                assert_ne!(spec.kernel, (1, 1), "{}", node.name);
                assert!(spec.bias, "{} lacks bias", node.name);
            }
            if node.name.ends_with(".bn2") {
                let consumers: Vec<_> = g.iter().filter(|n| n.inputs.contains(&i)).collect();
                assert_eq!(consumers.len(), 1);
                assert_eq!(consumers[0].kind, LayerKind::Concat);
            }
        }
    }
}

#[test]
fn backward_runs_and_fills_every_grad() {
    let cfg = ModelConfig {
        block_lengths: vec![1, 1, 1],
        ..ModelConfig::edgecnn_g()
    };
    let mut m = Model::<f32>::build(&cfg, 8).unwrap();
    let x = random_batch(Shape::new(2, 3, 44, 44), 9);
    let logits = m.forward(&x, Mode::Train).unwrap();
    let (_, probs) = crate::nnops::softmax_cross_entropy(&logits, &[1, 2]).unwrap();
    let g = crate::nnops::softmax_cross_entropy_backward(&probs, &[1, 2]).unwrap();
    let dx = m.backward(&g).unwrap();
    assert_eq!(dx.shape(), x.shape());
    for p in m.params_mut() {
        assert!(p.tensor.grad().is_some(), "{} has no gradient", p.name);
    }
    assert!(m.backward(&g).is_err());
}

#[test]
fn records_round_trip_model() {
    let mut m = Model::<f32>::build(&ModelConfig::edgecnn_g(), 10).unwrap();
    for (_, l) in m.learned_layers_mut() {
        l.condense().unwrap();
    }
    let ck = Checkpoint {
        header: m.config.to_kv(),
        records: m.to_records(false).unwrap(),
    };
    let back = Model::<f32>::from_checkpoint(&m.config, &ck).unwrap();
    assert_eq!(back, m);
    assert!(m.to_records(true).is_err());
}
