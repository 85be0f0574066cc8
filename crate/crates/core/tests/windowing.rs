mod support;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::reference::{forbidden_counts, region_attention, DenseWeights};
use swinfundus::tensor::{finite_diff_check, Tape, Tensor};
use swinfundus::windowing::*;
use swinfundus::{Error, Params};

const NAMES: [&str; 8] = ["Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo"];

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        (rng.random::<f64>() * 2.0 - 1.0) * scale
    })
}

fn random_weights(rng: &mut ChaCha8Rng, c: usize) -> Params {
    NAMES
        .iter()
        .map(|n| {
            let shape = if n.starts_with('W') {
                vec![c, c]
            } else {
                vec![c]
            };
            (n.to_string(), random(rng, &shape, 0.5))
        })
        .collect()
}

fn view(p: &Params) -> AttentionWeights<'_, f64> {
    let g = |n: &str| p.get(n).unwrap();
    AttentionWeights {
        wq: g("Wq"),
        bq: g("bq"),
        wk: g("Wk"),
        bk: g("bk"),
        wv: g("Wv"),
        bv: g("bv"),
        wo: g("Wo"),
        bo: g("bo"),
    }
}

fn dense(p: &Params) -> DenseWeights {
    let g = |n: &str| p.get(n).unwrap().to_vec();
    DenseWeights {
        wq: g("Wq"),
        bq: g("bq"),
        wk: g("Wk"),
        bk: g("bk"),
        wv: g("Wv"),
        bv: g("bv"),
        wo: g("Wo"),
        bo: g("bo"),
    }
}

fn zero_biases(p: &mut Params, c: usize) {
    for n in ["bq", "bk", "bv", "bo"] {
        p.insert(n, Tensor::zeros([c]));
    }
}

#[test]
fn shifted_attention_matches_region_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let m = if case % 2 == 0 { 2 } else { 4 };
        let (h, w) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let (b, c, heads) = (2, 8, 2);
        let p = random_weights(&mut rng, c);
        let x = random(&mut rng, &[b, h, w, c], 1.0);
        for s in [0, m / 2] {
            let grid = WindowGrid::new(h, w, m, s).unwrap();
            let got = shifted_window_attention(&Tape::new(), &x, &view(&p), heads, &grid).unwrap();
            let want = region_attention(x.data(), b, h, w, c, heads, m, s, &dense(&p));
            let dev = got
                .data()
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(dev);
        }
    }
    assert!(worst < 1e-10, "max deviation {worst:e}");
}

#[test]
fn mask_counts_on_four_by_four() {
    let mask = shift_attention_mask(&WindowGrid::new(4, 4, 2, 1).unwrap());
    let counts: Vec<usize> = (0..4).map(|w| mask.forbidden_count(w)).collect();
    assert_eq!(counts, vec![0, 8, 8, 12]);
    assert_eq!(counts, forbidden_counts(4, 4, 2, 1));
}

#[test]
fn single_window_mask_matches_enumeration() {
    for m in 2..=5 {
        for s in 0..m {
            let mask = shift_attention_mask(&WindowGrid::new(m, m, m, s).unwrap());
            assert_eq!(mask.num_windows(), 1);
            assert_eq!(mask.forbidden_count(0), forbidden_counts(m, m, m, s)[0]);
            assert_eq!(mask.is_all_zero(), s == 0);
        }
    }
}

#[test]
fn single_token_windows_pass_values_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = 6;
    let mut p = random_weights(&mut rng, c);
    zero_biases(&mut p, c);
    let xw = random(&mut rng, &[9, 1, c], 1.0);
    let tape = Tape::new();
    let out = window_attention_with_probs(&tape, &xw, &view(&p), 3, None).unwrap();
    assert!(out.probs.data().iter().all(|&a| a == 1.0));
    let direct = tape
        .matmul(
            &tape.matmul(&xw, p.get("Wv").unwrap()).unwrap(),
            p.get("Wo").unwrap(),
        )
        .unwrap();
    assert!(out.output.max_abs_diff(&direct) < 1e-12);
}

#[test]
fn diagonal_mask_attends_to_self_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, c) = (4, 4);
    let mut p = random_weights(&mut rng, c);
    zero_biases(&mut p, c);
    let xw = random(&mut rng, &[3, n, c], 1.0);
    let mask = Tensor::from_fn(
        [1, n, n],
        |i| if i / n % n == i % n { 0.0 } else { MASK_NEG },
    );
    let tape = Tape::new();
    let out = window_attention_with_probs(&tape, &xw, &view(&p), 2, Some(&mask)).unwrap();
    let direct = tape
        .matmul(
            &tape.matmul(&xw, p.get("Wv").unwrap()).unwrap(),
            p.get("Wo").unwrap(),
        )
        .unwrap();
    assert!(out.output.max_abs_diff(&direct) < 1e-12);
}

#[test]
fn masked_pairs_get_negligible_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, w, m, c) = (6, 6, 4, 8);
    let grid = WindowGrid::new(h, w, m, 2).unwrap();
    let mask = shift_attention_mask(&grid);
    let p = random_weights(&mut rng, c);
    let n = m * m;
    let xw = random(&mut rng, &[2 * grid.num_windows(), n, c], 3.0);
    let add = mask.to_additive::<f64>();
    let out = window_attention_with_probs(&Tape::new(), &xw, &view(&p), 2, Some(&add)).unwrap();
    let [b, heads, nw, _, _] = *out.probs.shape() else {
        panic!()
    };
    let mut checked = 0;
    for bi in 0..b {
        for hd in 0..heads {
            for win in 0..nw {
                for i in 0..n {
                    let mut row = 0.0;
                    for j in 0..n {
                        let a = out.probs.at(&[bi, hd, win, i, j]);
                        row += a;
                        if mask.is_forbidden(win, i, j) {
                            assert!(a < 1e-30, "masked weight {a:e}");
                            checked += 1;
                        }
                    }
                    assert!((row - 1.0).abs() < 1e-6);
                }
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn unmasked_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_weights(&mut rng, 8);
    let xw = random(&mut rng, &[5, 16, 8], 2.0);
    let out = window_attention_with_probs(&Tape::new(), &xw, &view(&p), 4, None).unwrap();
    for row in out.probs.data().chunks(16) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn attention_argument_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_weights(&mut rng, 6);
    let xw = random(&mut rng, &[2, 4, 6], 1.0);
    let tape = Tape::new();
    assert!(matches!(
        window_attention(&tape, &xw, &view(&p), 4, None),
        Err(Error::InvalidArgument(_))
    ));
    let bad_mask = Tensor::zeros([1, 3, 3]);
    assert!(matches!(
        window_attention(&tape, &xw, &view(&p), 2, Some(&bad_mask)),
        Err(Error::ShapeMismatch { .. })
    ));
    let grid = WindowGrid::new(4, 4, 2, 1).unwrap();
    let x = random(&mut rng, &[1, 4, 5, 6], 1.0);
    assert!(shifted_window_attention(&tape, &x, &view(&p), 2, &grid).is_err());
}

#[test]
fn streaming_kernel_agrees_with_tape() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (c, heads) = (8, 2);
    let p = random_weights(&mut rng, c);
    let grid = WindowGrid::new(8, 8, 4, 2).unwrap();
    let mask = shift_attention_mask(&grid);
    let xw = random(&mut rng, &[2 * grid.num_windows(), 16, c], 1.0);
    let tape = Tape::new();
    let add = mask.to_additive::<f64>();
    let want = window_attention(&tape, &xw, &view(&p), heads, Some(&add)).unwrap();
    let got = attention_inference(&xw, &view(&p), heads, Some(&mask)).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-12);

    let global = random(&mut rng, &[1, 64, c], 1.0);
    let want = window_attention(&tape, &global, &view(&p), heads, None).unwrap();
    let got = attention_inference(&global, &view(&p), heads, None).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn shifted_attention_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c = 4;
    let mut params = random_weights(&mut rng, c);
    params.insert("x", random(&mut rng, &[1, 5, 3, c], 1.0));
    let grid = WindowGrid::new(5, 3, 2, 1).unwrap();
    let report = finite_diff_check(
        |tape, p| {
            let y = shifted_window_attention(tape, p.get("x").unwrap(), &view(p), 2, &grid)?;
            tape.sum(&tape.mul(&y, &y)?)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn partition_and_shift_track_gradients() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::from_fn([1, 4, 4, 2], |i| i as f64));
    let w = window_partition(&tape, &cyclic_shift(&tape, &x, 1, -1).unwrap(), 2).unwrap();
    let padded = pad_bottom_right(&tape, &w.reshaped([1, 4, 4, 2]).unwrap(), 5, 5).unwrap();
    assert!(w.requires_grad() && !padded.requires_grad());
    let g = tape.backward(&tape.sum(&w).unwrap()).unwrap();
    assert!(g.wrt(&x).unwrap().data().iter().all(|&v| v == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_reverse_round_trip(
        b in 1usize..3, nh in 1usize..4, nw in 1usize..4, m in 1usize..5, c in 1usize..4, seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (nh * m, nw * m);
        let x = random(&mut rng, &[b, h, w, c], 1.0);
        let tape = Tape::new();
        let wins = window_partition(&tape, &x, m).unwrap();
        prop_assert_eq!(wins.shape(), &[b * nh * nw, m * m, c][..]);
        prop_assert_eq!(window_reverse(&tape, &wins, m, h, w).unwrap(), x);
    }

    #[test]
    fn cyclic_shift_inverts_and_preserves_values(
        h in 1usize..7, w in 1usize..7, dy in -10isize..10, dx in -10isize..10, seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, h, w, 3], 1.0);
        let tape = Tape::new();
        let y = cyclic_shift(&tape, &x, dy, dx).unwrap();
        prop_assert_eq!(&cyclic_shift(&tape, &y, -dy, -dx).unwrap(), &x);
        let mut a = x.to_vec();
        let mut b = y.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mask_matches_region_enumeration(h in 1usize..10, w in 1usize..10, m in 1usize..5, s in 0usize..4) {
        prop_assume!(s < m);
        let grid = WindowGrid::new(h, w, m, s).unwrap();
        let mask = shift_attention_mask(&grid);
        let counts: Vec<usize> = (0..mask.num_windows()).map(|w| mask.forbidden_count(w)).collect();
        prop_assert_eq!(counts, forbidden_counts(h, w, m, s));
        for win in 0..mask.num_windows() {
            for i in 0..m * m {
                for j in 0..m * m {
                    prop_assert_eq!(mask.is_forbidden(win, i, j), mask.is_forbidden(win, j, i));
                }
            }
        }
    }
}
