//! Max, average and global-average pooling. All sizing is floor mode.

use crate::error::{Error, Result};
use crate::nnops::conv::out_dim;
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolSpec {
    /// 3x3 max pool, stride 2, pad 1.
    pub const MAX_3S2: PoolSpec = PoolSpec {
        window: 3,
        stride: 2,
        pad: 1,
    };

    /// 2x2 average pool, stride 2.
    pub const AVG_2S2: PoolSpec = PoolSpec {
        window: 2,
        stride: 2,
        pad: 0,
    };

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let dims = (
            out_dim(input.h, self.window, self.stride, self.pad),
            out_dim(input.w, self.window, self.stride, self.pad),
        );
        match dims {
            (Some(h), Some(w)) if self.pad < self.window => Ok(Shape::new(input.n, input.c, h, w)),
            _ => Err(Error::shape(format!(
                "pool {}x{} stride {} pad {} underflows input {input}",
                self.window, self.window, self.stride, self.pad
            ))),
        }
    }
}

/// Max pool. Returns the output together with the flat input index chosen for
/// each output element (first maximum in row-major window order).
pub fn maxpool2d<T: Element>(x: &Tensor<T>, spec: PoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    let os = spec.output_shape(s)?;
    let mut out = Vec::with_capacity(os.numel());
    let mut argmax = Vec::with_capacity(os.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = T::neg_infinity();
                    let mut best_at = usize::MAX;
                    for ky in 0..spec.window {
                        let Some(iy) = (oy * spec.stride + ky).checked_sub(spec.pad) else {
                            continue;
                        };
                        if iy >= s.h {
                            continue;
                        }
                        for kx in 0..spec.window {
                            let Some(ix) = (ox * spec.stride + kx).checked_sub(spec.pad) else {
                                continue;
                            };
                            if ix >= s.w {
                                continue;
                            }
                            let at = s.offset(n, c, iy, ix);
                            let v = x.data()[at];
                            if best_at == usize::MAX || v > best {
                                best = v;
                                best_at = at;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    Ok((Tensor::from_vec(os, out)?, argmax))
}

pub fn maxpool2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input: Shape,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.shape().numel() {
        return Err(Error::shape("maxpool backward: argmax length"));
    }
    let mut dx = Tensor::zeros(input);
    let d = dx.data_mut();
    for (&at, &g) in argmax.iter().zip(grad_out.data()) {
        d[at] = d[at] + g;
    }
    Ok(dx)
}

/// Average pool without padding.
pub fn avgpool2d<T: Element>(x: &Tensor<T>, spec: PoolSpec) -> Result<Tensor<T>> {
    if spec.pad != 0 {
        return Err(Error::shape("average pooling does not support padding"));
    }
    let s = x.shape();
    let os = spec.output_shape(s)?;
    let scale = T::one() / T::from_usize(spec.window * spec.window).unwrap();
    let out = Tensor::from_fn(os, |n, c, oy, ox| {
        let mut acc = T::zero();
        for ky in 0..spec.window {
            for kx in 0..spec.window {
                acc = acc + x.at(n, c, oy * spec.stride + ky, ox * spec.stride + kx);
            }
        }
        acc * scale
    });
    Ok(out)
}

pub fn avgpool2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    spec: PoolSpec,
    input: Shape,
) -> Result<Tensor<T>> {
    let os = spec.output_shape(input)?;
    if os != grad_out.shape() {
        return Err(Error::shape("avgpool backward: grad_out shape"));
    }
    let scale = T::one() / T::from_usize(spec.window * spec.window).unwrap();
    let mut dx = Tensor::zeros(input);
    for n in 0..os.n {
        for c in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let g = grad_out.at(n, c, oy, ox) * scale;
                    for ky in 0..spec.window {
                        for kx in 0..spec.window {
                            let (iy, ix) = (oy * spec.stride + ky, ox * spec.stride + kx);
                            let v = dx.at(n, c, iy, ix) + g;
                            dx.set(n, c, iy, ix, v);
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// `(n, c, h, w) -> (n, c, 1, 1)` spatial mean.
pub fn global_avgpool<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let scale = T::one() / T::from_usize(s.plane().max(1)).unwrap();
    let data = x
        .data()
        .chunks(s.plane().max(1))
        .map(|p| p.iter().copied().sum::<T>() * scale)
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("one value per plane")
}

pub fn global_avgpool_backward<T: Element>(grad_out: &Tensor<T>, input: Shape) -> Result<Tensor<T>> {
    if grad_out.shape() != Shape::new(input.n, input.c, 1, 1) {
        return Err(Error::shape("global avgpool backward: grad_out shape"));
    }
    let scale = T::one() / T::from_usize(input.plane()).unwrap();
    let mut data = Vec::with_capacity(input.numel());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, input.plane()));
    }
    Tensor::from_vec(input, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_fields() {
        let x = Tensor::full(Shape::new(1, 2, 7, 7), 3.5f64);
        let (m, _) = maxpool2d(&x, PoolSpec::MAX_3S2).unwrap();
        assert!(m.data().iter().all(|&v| v == 3.5));
        let a = avgpool2d(&x, PoolSpec::AVG_2S2).unwrap();
        assert!(a.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn table_shape_transitions() {
        let mp = PoolSpec::MAX_3S2.output_shape(Shape::new(2, 32, 44, 44)).unwrap();
        assert_eq!(mp, Shape::new(2, 32, 22, 22));
        let ap = PoolSpec::AVG_2S2;
        assert_eq!(ap.output_shape(Shape::new(2, 64, 22, 22)).unwrap(), Shape::new(2, 64, 11, 11));
        assert_eq!(ap.output_shape(Shape::new(2, 96, 11, 11)).unwrap(), Shape::new(2, 96, 5, 5));
        let g = global_avgpool(&Tensor::<f32>::zeros(Shape::new(2, 152, 5, 5)));
        assert_eq!(g.shape(), Shape::new(2, 152, 1, 1));
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let x = random(Shape::new(1, 1, 5, 5), 9);
        let (y, _) = maxpool2d(&x, PoolSpec::MAX_3S2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        for oy in 0usize..3 {
            for ox in 0usize..3 {
                let mut best = f64::NEG_INFINITY;
                for iy in (2 * oy).saturating_sub(1)..=(2 * oy + 1).min(4) {
                    for ix in (2 * ox).saturating_sub(1)..=(2 * ox + 1).min(4) {
                        best = best.max(x.at(0, 0, iy, ix));
                    }
                }
                assert_eq!(y.at(0, 0, oy, ox), best);
            }
        }
    }

    #[test]
    fn maxpool_tie_picks_first_and_never_padding() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), -5.0f64);
        let (_, arg) = maxpool2d(&x, PoolSpec::MAX_3S2).unwrap();
        // first window covers rows/cols 0..=1; first in row-major order is (0, 0)
        assert_eq!(arg[0], 0);
        assert!(arg.iter().all(|&a| a < 9));
    }

    #[test]
    fn avgpool_backward_conserves_mass() {
        let s = Shape::new(2, 3, 11, 11);
        let os = PoolSpec::AVG_2S2.output_shape(s).unwrap();
        let g = random(os, 10);
        let dx = avgpool2d_backward(&g, PoolSpec::AVG_2S2, s).unwrap();
        let covered: f64 = (0..2)
            .flat_map(|n| (0..3).map(move |c| (n, c)))
            .map(|(n, c)| {
                (0..10)
                    .flat_map(|y| (0..10).map(move |x| (y, x)))
                    .map(|(y, x)| dx.at(n, c, y, x))
                    .sum::<f64>()
            })
            .sum();
        let total: f64 = g.data().iter().sum();
        assert!((covered - total).abs() < 1e-12);
        // trailing row/col dropped by floor mode receive nothing
        assert!((0..11).all(|i| dx.at(0, 0, 10, i) == 0.0 && dx.at(0, 0, i, 10) == 0.0));
    }

    #[test]
    fn global_pool_matches_mean_oracle() {
        let x = random(Shape::new(1, 3, 5, 5), 11);
        let y = global_avgpool(&x);
        for c in 0..3 {
            let mut acc = 0.0;
            for h in 0..5 {
                for w in 0..5 {
                    acc += x.at(0, c, h, w);
                }
            }
            assert!((y.at(0, c, 0, 0) - acc / 25.0).abs() < 1e-12);
        }
        let single = random(Shape::new(1, 4, 1, 1), 12);
        assert_eq!(global_avgpool(&single), single);
    }

    #[test]
    fn underflow_is_an_error() {
        assert!(PoolSpec::AVG_2S2.output_shape(Shape::new(1, 1, 1, 1)).is_err());
    }
}
