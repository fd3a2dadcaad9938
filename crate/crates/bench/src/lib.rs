//! Shared fixtures for the criterion benchmarks.

use edgecnn::nnops::init::he_normal;
use edgecnn::nnops::ConvSpec;
use edgecnn::{Model, ModelConfig, Shape, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use edgecnn::profile::EDGEBLOCK_SHAPES;

/// Deterministic unit-variance tensor.
pub fn random_tensor(shape: Shape, seed: u64) -> Tensor<f32> {
    he_normal(shape, 2, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Input, weight and bias for a 3x3 same-padding conv at an EdgeBlock shape.
pub fn conv_case(shape: (usize, usize, usize, usize), groups: usize) -> (ConvSpec, Tensor<f32>, Tensor<f32>, Vec<f32>) {
    let (cin, cout, h, w) = shape;
    let spec = ConvSpec::same3x3(cin, cout).with_groups(groups);
    let x = random_tensor(Shape::new(1, cin, h, w), 1);
    let weight = random_tensor(spec.weight_shape(), 2 + groups as u64);
    (spec, x, weight, vec![0.0; cout])
}

/// A model of the given variant; learned layers are condensed to their final stage.
pub fn inference_model(config: &ModelConfig) -> Model<f32> {
    let mut m = Model::build(config, 0).expect("default configs build");
    for (_, l) in m.learned_layers_mut() {
        while !l.is_fully_condensed() {
            l.condense().expect("condense below final stage");
        }
    }
    m
}
