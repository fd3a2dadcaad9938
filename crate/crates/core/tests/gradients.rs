mod support;

use support::{OpCheck, OPERATORS, TOLERANCE};

fn check(name: &str) {
    let (_, f) = OPERATORS.iter().find(|(n, _)| *n == name).unwrap();
    for seed in [1, 2] {
        let c: OpCheck = f(seed);
        assert!(c.passed(), "{name} (seed {seed}): worst relative error {:.3e}", c.worst);
    }
}

#[test]
fn conv2d() {
    check("conv2d");
}

#[test]
fn grouped_conv2d() {
    check("grouped conv2d");
}

#[test]
fn masked_learned_group_conv() {
    check("masked learned group conv");
}

#[test]
fn batch_norm() {
    check("batch norm (train)");
}

#[test]
fn relu() {
    check("relu");
}

#[test]
fn max_pool() {
    check("max pool 3x3/2");
}

#[test]
fn avg_pool() {
    check("avg pool 2x2/2");
}

#[test]
fn global_avg_pool() {
    check("global avg pool");
}

#[test]
fn linear() {
    check("linear");
}

#[test]
fn softmax_cross_entropy() {
    check("softmax cross-entropy");
}

#[test]
fn channel_concat() {
    check("channel concat");
}

#[test]
fn channel_index_select() {
    check("channel index-select");
}

#[test]
fn whole_network() {
    let e = support::whole_model(3, 6);
    assert!(e < TOLERANCE, "end-to-end relative error {e:.3e}");
}

#[test]
fn error_metric() {
    assert_eq!(support::rel_err(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert!((support::rel_err(&[1.0, 0.0], &[1.0, 1e-3]) - 1e-3).abs() < 1e-9);
}
