//! Helpers shared between the gradient-check and acceptance test targets.

#![allow(dead_code)]

use msan_core::params::ParamSet;
use msan_core::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-4;

pub fn close(analytic: f64, numeric: f64) -> bool {
    let tol = 1e-4 * analytic.abs().max(numeric.abs()).max(1.0);
    (analytic - numeric).abs() <= tol
}

pub fn assert_close(analytic: f64, numeric: f64, ctx: &str) {
    assert!(close(analytic, numeric), "{ctx}: analytic {analytic} vs numeric {numeric}");
}

/// Reduce an arbitrary output to a scalar with distinct constant weights so
/// that no two output coordinates can mask each other's gradient errors.
pub fn weighted_sum(t: &Tensor) -> Tensor {
    let (r, c) = t.shape();
    let w = Tensor::from_vec(r, c, (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect());
    t.mul(&w).unwrap().sum()
}

fn eval_untracked(
    shapes: &[(usize, usize)],
    datas: &[Vec<f64>],
    f: &dyn Fn(&[Tensor]) -> Tensor,
) -> f64 {
    let ts: Vec<Tensor> = shapes
        .iter()
        .zip(datas)
        .map(|(&(r, c), d)| Tensor::from_vec(r, c, d.clone()))
        .collect();
    f(&ts).item()
}

/// Compare analytic gradients against central differences over every input
/// coordinate, across `seeds` random draws. `min_abs` keeps samples away from
/// non-differentiable kinks (relu/leaky_relu/elu at zero).
pub fn check_op(
    name: &str,
    shapes: &[(usize, usize)],
    min_abs: f64,
    seeds: u64,
    f: &dyn Fn(&[Tensor]) -> Tensor,
) {
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let datas: Vec<Vec<f64>> = shapes
            .iter()
            .map(|&(r, c)| {
                (0..r * c)
                    .map(|_| {
                        let v: f64 = rng.gen_range(-2.0..2.0);
                        if v.abs() < min_abs {
                            min_abs + v.abs()
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();

        let tape = Tape::new();
        let tracked: Vec<Tensor> = shapes
            .iter()
            .zip(&datas)
            .map(|(&(r, c), d)| Tensor::from_vec(r, c, d.clone()).watched(&tape))
            .collect();
        let grads = f(&tracked).backward();

        for (k, t) in tracked.iter().enumerate() {
            let g = grads.wrt(t).unwrap_or_else(|| panic!("{name}: input {k} unreached"));
            for idx in 0..g.len() {
                let mut plus = datas.clone();
                plus[k][idx] += H;
                let mut minus = datas.clone();
                minus[k][idx] -= H;
                let numeric = (eval_untracked(shapes, &plus, f)
                    - eval_untracked(shapes, &minus, f))
                    / (2.0 * H);
                assert_close(g[idx], numeric, &format!("{name} seed {seed} input {k} coord {idx}"));
            }
        }
    }
}

/// Run every per-operation gradient check once, with `seeds` random draws each.
pub fn check_all_ops(seeds: u64) {
    check_op("matmul", &[(2, 3), (3, 4)], 0.0, seeds, &|x| {
        weighted_sum(&x[0].matmul(&x[1]).unwrap())
    });
    check_op("add", &[(3, 2), (3, 2)], 0.0, seeds, &|x| weighted_sum(&x[0].add(&x[1]).unwrap()));
    check_op("sub", &[(3, 2), (3, 2)], 0.0, seeds, &|x| weighted_sum(&x[0].sub(&x[1]).unwrap()));
    check_op("mul", &[(3, 2), (3, 2)], 0.0, seeds, &|x| weighted_sum(&x[0].mul(&x[1]).unwrap()));
    check_op("scale", &[(2, 3)], 0.0, seeds, &|x| weighted_sum(&x[0].scale(-1.7)));
    check_op("scale_by", &[(2, 3), (1, 1)], 0.0, seeds, &|x| {
        weighted_sum(&x[0].scale_by(&x[1]).unwrap())
    });
    check_op("add_row_broadcast", &[(3, 4), (1, 4)], 0.0, seeds, &|x| {
        weighted_sum(&x[0].add_row_broadcast(&x[1]).unwrap())
    });
    check_op("transpose", &[(2, 4)], 0.0, seeds, &|x| weighted_sum(&x[0].transpose()));
    check_op("reshape", &[(2, 4)], 0.0, seeds, &|x| weighted_sum(&x[0].reshape(4, 2).unwrap()));
    check_op("relu", &[(3, 3)], 0.01, seeds, &|x| weighted_sum(&x[0].relu()));
    check_op("leaky_relu", &[(3, 3)], 0.01, seeds, &|x| weighted_sum(&x[0].leaky_relu(0.2)));
    check_op("elu", &[(3, 3)], 0.01, seeds, &|x| weighted_sum(&x[0].elu()));
    check_op("sigmoid", &[(3, 3)], 0.0, seeds, &|x| weighted_sum(&x[0].sigmoid()));
    check_op("row_softmax", &[(3, 4)], 0.0, seeds, &|x| weighted_sum(&x[0].row_softmax()));
    check_op("masked_row_softmax", &[(3, 4)], 0.0, seeds, &|x| {
        let mask = Tensor::from_vec(
            3,
            4,
            vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0],
        );
        weighted_sum(&x[0].masked_row_softmax(&mask).unwrap())
    });
    check_op("sum_rows", &[(3, 4)], 0.0, seeds, &|x| weighted_sum(&x[0].sum_rows()));
    check_op("sum", &[(3, 4)], 0.0, seeds, &|x| x[0].sum());
    check_op("row_l2_normalize", &[(3, 4)], 0.05, seeds, &|x| {
        weighted_sum(&x[0].row_l2_normalize())
    });
    check_op("concat_cols", &[(2, 3), (2, 2)], 0.0, seeds, &|x| {
        weighted_sum(&Tensor::concat_cols(&[&x[0], &x[1]]).unwrap())
    });
    check_op("concat_rows", &[(2, 3), (3, 3)], 0.0, seeds, &|x| {
        weighted_sum(&Tensor::concat_rows(&[&x[0], &x[1]]).unwrap())
    });
    check_op("bce_with_logits", &[(4, 1)], 0.0, seeds, &|x| {
        x[0].bce_with_logits(&[1.0, 0.0, 1.0, 0.0]).unwrap()
    });
}

/// Check one parameter coordinate by central differences. A ReLU kink can
/// fall inside the +-H interval for the occasional coordinate; retry those
/// with a step small enough to stay on one side of the kink.
pub fn check_param_coord(
    f: &dyn Fn(&ParamSet) -> f64,
    params: &ParamSet,
    name: &str,
    idx: usize,
    analytic: f64,
    ctx: &str,
) {
    for step in [H, 1e-6] {
        let mut plus = params.clone();
        plus.get_mut(name).unwrap().data[idx] += step;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().data[idx] -= step;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
        if close(analytic, numeric) {
            return;
        }
        if step != H {
            assert_close(analytic, numeric, ctx);
        }
    }
}

/// Move every parameter slightly off its initial value. Zero-initialized
/// biases put the loss exactly on a ReLU kink (a dead hidden row makes the
/// next pre-activation equal the bias); finite differences are only meaningful
/// at a generic point.
pub fn jitter(params: &mut ParamSet, rng: &mut impl Rng) {
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    for name in names {
        for v in &mut params.get_mut(&name).unwrap().data {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
}
