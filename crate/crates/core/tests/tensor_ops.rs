use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swinfundus::tensor::{finite_diff_check, Mode, Tape, Tensor};
use swinfundus::{Error, Params};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
}

/// erf by its Maclaurin series; independent of the library implementation.
fn erf_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = x; // x^(2n+1) (-1)^n / n!
    for n in 0..60 {
        sum += term / (2 * n + 1) as f64;
        term *= -x * x / (n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[i] += eps;
            lo[i] -= eps;
            (f(&hi) - f(&lo)) / (2.0 * eps)
        })
        .collect()
}

#[test]
fn matmul_examples() {
    let tape = Tape::<f64>::new();
    let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
    assert_eq!(tape.matmul(&Tensor::eye(2), &b).unwrap(), b);
    let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(tape.matmul(&a, &Tensor::eye(2)).unwrap(), a);
    let c = tape.matmul(&a, &b).unwrap();
    assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::<f64>::new();
    let err = tape
        .matmul(&Tensor::<f64>::zeros([2, 3]), &Tensor::zeros([2, 3]))
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, Error::ShapeMismatch { .. }));
}

#[test]
fn batched_and_transposed_matmul_agree_with_loops() {
    let tape = Tape::<f64>::new();
    let a = Tensor::from_fn([3, 2, 4], |i| (i as f64 * 0.37).sin());
    let b = Tensor::from_fn([3, 5, 4], |i| (i as f64 * 0.11).cos());
    let c = tape.matmul_nt(&a, &b).unwrap();
    assert_eq!(c.shape(), &[3, 2, 5]);
    for bi in 0..3 {
        for i in 0..2 {
            for j in 0..5 {
                let expect: f64 = (0..4).map(|k| a.at(&[bi, i, k]) * b.at(&[bi, j, k])).sum();
                assert!((c.at(&[bi, i, j]) - expect).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn softmax_examples() {
    let tape = Tape::<f64>::new();
    let y = tape.softmax(&t(&[2], &[0.0, 0.0]), 0).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5]);
    let y = tape.softmax(&t(&[2], &[0.0, 2f64.ln()]), 0).unwrap();
    assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((y.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    let x = t(&[2, 3], &[0.1, -2.0, 3.0, 4.0, 0.5, -0.25]);
    let shifted = x.map(|v| v + 17.5);
    let (a, b) = (
        tape.softmax(&x, 1).unwrap(),
        tape.softmax(&shifted, 1).unwrap(),
    );
    assert!(a.max_abs_diff(&b) < 1e-15);
    assert!(matches!(
        tape.softmax(&x, 2),
        Err(Error::InvalidAxis { axis: 2, rank: 2 })
    ));
}

#[test]
fn softmax_along_leading_axis() {
    let tape = Tape::<f64>::new();
    let x = t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]);
    let y = tape.softmax(&x, 0).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5]);
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::<f64>::new();
    let (g, b) = (Tensor::ones([4]), Tensor::zeros([4]));
    let y = tape
        .layer_norm(&Tensor::<f64>::full([3, 4], 2.5), &g, &b, 1e-5)
        .unwrap();
    assert!(y.data().iter().all(|&v| v.abs() < 1e-12));

    let (g2, b2) = (Tensor::ones([2]), Tensor::zeros([2]));
    let y = tape
        .layer_norm(&t(&[2], &[1.0, -1.0]), &g2, &b2, 1e-15)
        .unwrap();
    assert!((y.data()[0] - 1.0).abs() < 1e-12 && (y.data()[1] + 1.0).abs() < 1e-12);

    assert!(matches!(
        tape.layer_norm(&Tensor::ones([3, 4]), &g2, &b2, 1e-5),
        Err(Error::ShapeMismatch { .. })
    ));
    assert!(tape.layer_norm(&Tensor::ones([3, 4]), &g, &b, 0.0).is_err());
}

#[test]
fn gelu_examples() {
    let tape = Tape::<f64>::new();
    let y = tape.gelu(&t(&[3], &[0.0, 10.0, 1.0])).unwrap();
    assert_eq!(y.data()[0], 0.0);
    assert!((y.data()[1] - 10.0).abs() < 1e-6);
    let phi_1 = 0.5 * (1.0 + erf_series(std::f64::consts::FRAC_1_SQRT_2));
    assert!((phi_1 - 0.841345).abs() < 1e-6);
    assert!((y.data()[2] - phi_1).abs() < 1e-12);
}

#[test]
fn dropout_modes() {
    let tape = Tape::<f64>::new();
    let x = Tensor::from_fn([100], |i| i as f64 - 50.0);
    assert_eq!(tape.dropout(&x, 0.3, &mut Mode::Eval).unwrap(), x);
    let mut train = Mode::Train(ChaCha8Rng::seed_from_u64(1));
    assert_eq!(tape.dropout(&x, 0.0, &mut train).unwrap(), x);
    assert!(tape.dropout(&x, 1.0, &mut train).is_err());

    let n = 100_000;
    let ones = Tensor::ones([n]);
    let y = tape.dropout(&ones, 0.5, &mut train).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    // Each element is 2·Bernoulli(0.5): mean 1, variance 1.
    let mean = y.data().iter().sum::<f64>() / n as f64;
    let sigma = (1.0 / n as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
}

#[test]
fn backward_of_sum_of_squares() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
    let sq = tape.mul(&x, &x).unwrap();
    let loss = tape.sum(&sq).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_of_matmul_sum_matches_central_differences() {
    let a0 = Tensor::from_fn([3, 4], |i| (i as f64 * 0.7).sin());
    let b0 = Tensor::from_fn([4, 2], |i| (i as f64 * 0.3).cos());
    let tape = Tape::<f64>::new();
    let (a, b) = (tape.leaf(&a0), tape.leaf(&b0));
    let loss = tape.sum(&tape.matmul(&a, &b).unwrap()).unwrap();
    let grads = tape.backward(&loss).unwrap();

    let eval = |av: &[f64], bv: &[f64]| {
        let tape = Tape::<f64>::new();
        let c = tape.matmul(&t(&[3, 4], av), &t(&[4, 2], bv)).unwrap();
        c.data().iter().sum::<f64>()
    };
    let num_a = central_difference(|x| eval(x, b0.data()), a0.data(), 1e-5);
    let num_b = central_difference(|x| eval(a0.data(), x), b0.data(), 1e-5);
    for (an, nu) in grads.wrt(&a).unwrap().data().iter().zip(&num_a) {
        assert!((an - nu).abs() / an.abs().max(nu.abs()) < 1e-6);
    }
    for (an, nu) in grads.wrt(&b).unwrap().data().iter().zip(&num_b) {
        assert!((an - nu).abs() / an.abs().max(nu.abs()) < 1e-6);
    }
}

#[test]
fn softmax_cross_entropy_gradient_is_p_minus_onehot() {
    let z0 = t(&[5], &[0.3, -1.2, 2.0, 0.0, 0.7]);
    let label = 2;
    let tape = Tape::<f64>::new();
    let z = tape.leaf(&z0);
    let p = tape.softmax(&z, 0).unwrap();
    let loss = tape.cross_entropy(&p, &[label]).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let g = grads.wrt(&z).unwrap();
    let numeric = central_difference(
        |x| {
            let tape = Tape::<f64>::new();
            let p = tape.softmax(&t(&[5], x), 0).unwrap();
            tape.cross_entropy(&p, &[label]).unwrap().item()
        },
        z0.data(),
        1e-5,
    );
    for i in 0..5 {
        let expect = p.data()[i] - if i == label { 1.0 } else { 0.0 };
        assert!((g.data()[i] - expect).abs() < 1e-12);
        assert!((g.data()[i] - numeric[i]).abs() < 1e-8);
    }
}

#[test]
fn backward_errors() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(&Tensor::ones([3]));
    let y = tape.scale(&x, 2.0).unwrap();
    assert!(matches!(tape.backward(&y), Err(Error::Tape(_))));
    let detached = Tensor::scalar(1.0);
    assert!(matches!(tape.backward(&detached), Err(Error::Tape(_))));
    let other = Tape::<f64>::new();
    let z = other.sum(&other.leaf(&Tensor::ones([2]))).unwrap();
    assert!(matches!(tape.backward(&z), Err(Error::Tape(_))));
    assert!(tape.add(&x, &z).is_err());
}

#[test]
fn fan_out_accumulates_and_replay_is_deterministic() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(&t(&[2, 3], &[0.5, -1.0, 2.0, 0.1, 0.2, -0.3]));
    let g = tape.gelu(&x).unwrap();
    let s = tape.softmax(&x, 1).unwrap();
    let both = tape.mul(&g, &s).unwrap();
    let again = tape.add(&both, &x).unwrap();
    let loss = tape.sum(&again).unwrap();
    let first = tape.backward(&loss).unwrap();
    let second = tape.backward(&loss).unwrap();
    assert_eq!(first.wrt(&x).unwrap(), second.wrt(&x).unwrap());
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(&Tensor::ones([2]));
    let unused = tape.leaf(&Tensor::ones([3]));
    let loss = tape.sum(&x).unwrap();
    let late = tape.leaf(&Tensor::ones([4]));
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&unused).unwrap(), &Tensor::zeros([3]));
    assert_eq!(grads.wrt(&late).unwrap(), &Tensor::zeros([4]));
}

#[test]
fn finite_diff_check_examples() {
    let mut params = Params::new();
    params.insert("theta", Tensor::scalar(3.0));
    let report = finite_diff_check(
        |tape, p| {
            let th = p.require("theta")?;
            tape.mul(th, th)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!((report.analytic - 6.0).abs() < 1e-12);
    assert!((report.numeric - 6.0).abs() < 1e-8);
    assert!(report.max_rel_error < 1e-9);

    let report = finite_diff_check(
        |tape, p| tape.scale(p.require("theta")?, 0.0),
        &params,
        1e-5,
    )
    .unwrap();
    assert_eq!(report.analytic, 0.0);
    assert_eq!(report.numeric, 0.0);

    let nan = finite_diff_check(
        |tape, p| tape.scale(p.require("theta")?, f64::NAN),
        &params,
        1e-5,
    );
    assert!(matches!(nan, Err(Error::NonFinite(_))));
}

fn composite_loss(tape: &Tape, p: &Params) -> swinfundus::Result<Tensor> {
    let x = p.require("x")?;
    let w = p.require("w")?;
    let gamma = p.require("gamma")?;
    let beta = p.require("beta")?;
    let h = tape.matmul(x, w)?;
    let h = tape.layer_norm(&h, gamma, &beta.clone(), 1e-5)?;
    let h = tape.gelu(&h)?;
    let rank = h.rank();
    let h = tape.permute(&h, &[rank - 1, 0])?;
    let h = tape.softmax(&h, 0)?;
    let pooled = tape.mean_axis(&h, 1)?;
    let s = tape.mul(&pooled, &pooled)?;
    tape.sum(&s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_slices_sum_to_one(values in proptest::collection::vec(-30.0f64..30.0, 12), axis in 0usize..3) {
        let tape = Tape::<f64>::new();
        let x = t(&[2, 3, 2], &values);
        let y = tape.softmax(&x, axis).unwrap();
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        let shape = [2usize, 3, 2];
        let mut sums = std::collections::HashMap::<Vec<usize>, f64>::new();
        for i in 0..2 { for j in 0..3 { for k in 0..2 {
            let mut key = vec![i, j, k];
            key.remove(axis);
            *sums.entry(key).or_default() += y.at(&[i, j, k]);
        }}}
        prop_assert_eq!(sums.len(), 12 / shape[axis]);
        for s in sums.values() {
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_output_moments(values in proptest::collection::vec(-100.0f64..100.0, 16)) {
        let spread = values.iter().cloned().fold(f64::MIN, f64::max) - values.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-2);
        let tape = Tape::<f64>::new();
        let y = tape.layer_norm(&t(&[16], &values), &Tensor::ones([16]), &Tensor::zeros([16]), 1e-12).unwrap();
        let mean = y.data().iter().sum::<f64>() / 16.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_is_monotone_and_bounded(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let tape = Tape::<f64>::new();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let y = tape.gelu(&t(&[2], &[lo, hi])).unwrap();
        // GELU has its minimum near x = -0.7518 and is increasing above it.
        if lo >= -0.75 {
            prop_assert!(y.data()[0] <= y.data()[1]);
        }
        for (&x, &g) in [lo, hi].iter().zip(y.data()) {
            if x >= 0.0 {
                prop_assert!(0.0 <= g && g <= x);
            } else {
                prop_assert!(x <= g && g <= 0.0);
            }
        }
    }

    #[test]
    fn composite_gradients_match_finite_differences(m in 1usize..4, k in 1usize..4, n in 2usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let mut rand_t = |shape: &[usize]| Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0));
        let mut p = Params::new();
        p.insert("x", rand_t(&[m, k]));
        p.insert("w", rand_t(&[k, n]));
        p.insert("gamma", rand_t(&[n]));
        p.insert("beta", rand_t(&[n]));
        let report = finite_diff_check(composite_loss, &p, 1e-5).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
    }
}
