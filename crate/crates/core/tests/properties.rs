use edgecnn::lgc::LearnedGroupConv;
use edgecnn::model::ParamMut;
use edgecnn::nnops::conv::reference;
use edgecnn::nnops::{avgpool2d_backward, conv2d, softmax, softmax_cross_entropy, ConvSpec, PoolSpec};
use edgecnn::tensor::{concat_channels, index_select_channels};
use edgecnn::train::Sgd;
use edgecnn::{Model, ModelConfig, Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

fn conv_spec() -> impl Strategy<Value = (ConvSpec, usize, usize, usize)> {
    (1usize..=4, 1usize..=3, 1usize..=3, 1usize..=3, 1usize..=2, 0usize..=2, 3usize..=9, 3usize..=9, 1usize..=2).prop_map(
        |(g, ipg, opg, k, stride, pad, h, w, n)| {
            let spec = ConvSpec {
                in_channels: g * ipg,
                out_channels: g * opg,
                kernel: (k, k),
                stride,
                pad: pad.min(k - 1),
                groups: g,
                bias: true,
            };
            (spec, n, h, w)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fast_conv_matches_reference((spec, n, h, w) in conv_spec(), seed in any::<u64>()) {
        let x = random(Shape::new(n, spec.in_channels, h, w), seed);
        let weight = random(spec.weight_shape(), seed ^ 1);
        let bias: Vec<f64> = random(Shape::new(1, spec.out_channels, 1, 1), seed ^ 2).into_data();
        let fast = conv2d(&x, &spec, &weight, Some(&bias)).unwrap();
        let slow = reference::conv2d(&x, &spec, &weight, Some(&bias)).unwrap();
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-12);
    }

    #[test]
    fn grouped_conv_is_concatenated_slab_convs((spec, n, h, w) in conv_spec(), seed in any::<u64>()) {
        let spec = ConvSpec { bias: false, ..spec };
        let x: Tensor<f32> = random(Shape::new(n, spec.in_channels, h, w), seed).cast();
        let weight: Tensor<f32> = random(spec.weight_shape(), seed ^ 1).cast();
        let grouped = conv2d(&x, &spec, &weight, None).unwrap();
        let (ipg, opg) = (spec.in_per_group(), spec.out_per_group());
        let slab = ConvSpec { in_channels: ipg, out_channels: opg, groups: 1, ..spec };
        let per = slab.weight_shape().item();
        let mut parts = Vec::new();
        for g in 0..spec.groups {
            let xs = index_select_channels(&x, &(g * ipg..(g + 1) * ipg).collect::<Vec<_>>()).unwrap();
            let ws = Tensor::from_vec(slab.weight_shape(), weight.data()[g * opg * per..(g + 1) * opg * per].to_vec()).unwrap();
            parts.push(conv2d(&xs, &slab, &ws, None).unwrap());
        }
        let dense = concat_channels(&parts.iter().collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(
            grouped.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            dense.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn softmax_rows_sum_to_one(n in 1usize..5, k in 2usize..9, scale in 0.1f64..50.0, seed in any::<u64>()) {
        let mut logits = random(Shape::new(n, k, 1, 1), seed);
        logits.data_mut().iter_mut().for_each(|v| *v *= scale);
        let p = softmax(&logits);
        for row in p.data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % k).collect();
        let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn avgpool_backward_conserves_mass(n in 1usize..3, c in 1usize..4, h in 2usize..12, w in 2usize..12, seed in any::<u64>()) {
        let input = Shape::new(n, c, h, w);
        let out = PoolSpec::AVG_2S2.output_shape(input).unwrap();
        let g = random(out, seed);
        let gx = avgpool2d_backward(&g, PoolSpec::AVG_2S2, input).unwrap();
        let covered: f64 = (0..n).flat_map(|b| (0..c).map(move |ch| (b, ch)))
            .map(|(b, ch)| {
                let mut s = 0.0;
                for y in 0..2 * out.h { for x in 0..2 * out.w { s += gx.at(b, ch, y, x); } }
                s
            })
            .sum();
        prop_assert!((covered - g.data().iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn condensation_keeps_masks_shared_and_monotone(
        g in prop::sample::select(vec![1usize, 2, 4, 8]),
        opg in 1usize..3,
        cin in 1usize..40,
        c in 1usize..9,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = LearnedGroupConv::<f64>::new(cin, g * opg, g, c, &mut rng).unwrap();
        let mut prev = l.mask().to_vec();
        while !l.is_fully_condensed() {
            l.condense().unwrap();
            let mask = l.mask();
            prop_assert!(mask.iter().zip(&prev).all(|(&now, &before)| !now || before));
            for o in 0..g * opg {
                let lead = (o / opg) * opg;
                prop_assert_eq!(&mask[o * cin..(o + 1) * cin], &mask[lead * cin..(lead + 1) * cin]);
            }
            for grp in 0..g {
                prop_assert_eq!(l.alive_inputs(grp).len(), l.alive_target(l.stage()));
            }
            prev = mask.to_vec();
        }
        let x = random(Shape::new(1, cin, 5, 4), seed ^ 3);
        let masked = conv2d(&x, l.spec(), &l.masked_weight(), Some(l.bias.data())).unwrap();
        prop_assert_eq!(l.forward(&x).unwrap(), masked.clone());
        let packed = l.export_grouped().unwrap().forward(&x).unwrap();
        prop_assert!(packed.max_abs_diff(&masked) <= 1e-12);
    }

    #[test]
    fn sgd_with_zero_lr_changes_nothing(wd in 0.0f64..1e-2, mu in 0.0f64..0.99, seed in any::<u64>()) {
        let mut t = random(Shape::new(2, 3, 2, 2), seed);
        t.accumulate_grad(random(t.shape(), seed ^ 5).data()).unwrap();
        let before = t.clone();
        let mut sgd = Sgd::new(mu, wd, false);
        for _ in 0..3 {
            let p = ParamMut { name: "w".into(), tensor: &mut t, decay: true, mask: None };
            sgd.step(vec![p], 0.0).unwrap();
        }
        prop_assert_eq!(
            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            before.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn weight_decay_alone_shrinks_magnitudes(wd in 1e-4f64..1e-1, lr in 1e-3f64..1.0, seed in any::<u64>()) {
        let mut t = random(Shape::new(1, 4, 3, 3), seed);
        t.data_mut().iter_mut().for_each(|v| if *v == 0.0 { *v = 0.5 });
        let before = t.clone();
        let mut sgd = Sgd::new(0.9, wd, false);
        let p = ParamMut { name: "w".into(), tensor: &mut t, decay: true, mask: None };
        sgd.step(vec![p], lr).unwrap();
        for (a, b) in t.data().iter().zip(before.data()) {
            prop_assert!(a.abs() < b.abs());
        }
    }
}

#[test]
fn forward_is_independent_of_thread_count() {
    for cfg in [ModelConfig::edgecnn(), ModelConfig::edgecnn_g()] {
        let model = Model::<f32>::build(&cfg, 3).unwrap();
        let x: Tensor<f32> = random(model.input_shape(4), 8).cast();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| model.predict(&x).unwrap())
        };
        let one = run(1);
        let many = run(4);
        assert!(one.data().iter().zip(many.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
