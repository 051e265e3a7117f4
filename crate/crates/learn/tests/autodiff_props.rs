//! Primitive-level gradient checks against central differences, backward
//! determinism, and input immutability.

use pnf_learn::tensor::{gradient_check, Matrix, Reduce, Tape};
use pnf_core::rng::StreamRng;
use proptest::prelude::*;
use std::rc::Rc;

fn rand_matrix(rng: &mut StreamRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.uniform_in(lo, hi)).collect(),
    )
}

/// Keep values away from zero so ReLU/abs kinks stay outside the stencil.
fn rand_matrix_no_kink(rng: &mut StreamRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let v = rng.uniform_in(0.05, 1.5);
                if rng.uniform() < 0.5 {
                    -v
                } else {
                    v
                }
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn matmul_add_chain_gradients(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..4) {
        let mut rng = StreamRng::from_seed(seed).stream("mm");
        let a = rand_matrix(&mut rng, m, k, -1.0, 1.0);
        let b = rand_matrix(&mut rng, k, n, -1.0, 1.0);
        let c = rand_matrix(&mut rng, m, n, -1.0, 1.0);
        let err = gradient_check(
            |tape, p| {
                let prod = tape.matmul(p[0], p[1])?;
                let s = tape.add(prod, p[2])?;
                let sq = tape.square(s);
                Ok(tape.sum(sq))
            },
            &[a, b, c],
            1e-5,
        ).unwrap();
        prop_assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn pointwise_nonlinearities(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..4) {
        let mut rng = StreamRng::from_seed(seed).stream("pw");
        let x = rand_matrix_no_kink(&mut rng, rows, cols);
        // relu included: inputs are bounded away from the kink.
        let err = gradient_check(
            |tape, p| {
                let r = tape.relu(p[0]);
                let e = tape.elu(p[0], 1.0);
                let t = tape.tanh(p[0]);
                let s = tape.sigmoid(p[0]);
                let sum1 = tape.add(r, e)?;
                let sum2 = tape.add(t, s)?;
                let both = tape.mul(sum1, sum2)?;
                Ok(tape.mean(both))
            },
            &[x],
            1e-6,
        ).unwrap();
        prop_assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn exps_logs_squares(seed in any::<u64>(), rows in 1usize..6) {
        let mut rng = StreamRng::from_seed(seed).stream("el");
        let x = rand_matrix(&mut rng, rows, 2, 0.2, 2.0);
        let err = gradient_check(
            |tape, p| {
                let l = tape.log(p[0]);
                let e = tape.exp(l);
                let sq = tape.square(e);
                let sc = tape.scale(sq, 0.3);
                let sh = tape.add_scalar(sc, 1.0);
                Ok(tape.sum(sh))
            },
            &[x],
            1e-6,
        ).unwrap();
        prop_assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn broadcast_concat_slice(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..4) {
        let mut rng = StreamRng::from_seed(seed).stream("bc");
        let x = rand_matrix(&mut rng, rows, cols, -1.0, 1.0);
        let y = rand_matrix(&mut rng, rows, cols, -1.0, 1.0);
        let row = rand_matrix(&mut rng, 1, 2 * cols, -1.0, 1.0);
        let err = gradient_check(
            move |tape, p| {
                let cat = tape.concat_cols(&[p[0], p[1]])?;
                let shifted = tape.broadcast_add_row(cat, p[2])?;
                let left = tape.slice_cols(shifted, 0, 1)?;
                let sq = tape.square(left);
                Ok(tape.sum(sq))
            },
            &[x, y, row],
            1e-5,
        ).unwrap();
        prop_assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gather_scatter_reductions(seed in any::<u64>(), rows in 2usize..7, buckets in 1usize..4) {
        let mut rng = StreamRng::from_seed(seed).stream("gs");
        // Distinct entries keep the max-reduction away from ties.
        let mut vals: Vec<f64> = (0..rows * 2)
            .map(|i| i as f64 * 0.37 + rng.uniform_in(0.0, 0.1))
            .collect();
        let mut order: Vec<usize> = (0..vals.len()).collect();
        rng.shuffle(&mut order);
        let shuffled: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        vals = shuffled;
        let x = Matrix::from_vec(rows, 2, vals);
        let dst: Rc<Vec<usize>> = Rc::new((0..rows).map(|i| i % buckets).collect());
        let gather_idx: Rc<Vec<usize>> = Rc::new((0..rows).map(|i| (i * 7) % buckets).collect());
        for reduce in [Reduce::Sum, Reduce::Mean, Reduce::Max] {
            let dst = dst.clone();
            let gather_idx = gather_idx.clone();
            let err = gradient_check(
                move |tape, p| {
                    let pooled = tape.scatter_rows(p[0], dst.clone(), buckets, reduce)?;
                    let regathered = tape.gather_rows(pooled, gather_idx.clone())?;
                    let sq = tape.square(regathered);
                    Ok(tape.sum(sq))
                },
                &[x.clone()],
                1e-6,
            ).unwrap();
            prop_assert!(err < 1e-4, "{reduce:?}: max relative error {err}");
        }
    }

    #[test]
    fn logsumexp_temperatures(seed in any::<u64>(), rows in 1usize..8, tau in 0.5f64..2.0) {
        // tau * range kept small enough that central differences can still
        // resolve every softmax weight; saturated temperatures are covered
        // by the exact-softmax test below.
        let mut rng = StreamRng::from_seed(seed).stream("lse");
        let x = rand_matrix(&mut rng, rows, 1, -2.0, 2.0);
        let err = gradient_check(
            move |tape, p| Ok(tape.logsumexp_tau(p[0], tau)?),
            &[x],
            1e-6,
        ).unwrap();
        prop_assert!(err < 1e-4, "max relative error {err}");
    }
}

/// At saturating temperatures the gradient equals the softmax weights,
/// checked in closed form where finite differences lose resolution.
#[test]
fn logsumexp_gradient_is_softmax_at_high_temperature() {
    let xs = [-1.9f64, 0.3, 1.9, 1.2];
    for tau in [10.0, 100.0, 1000.0] {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::column(&xs));
        let out = tape.logsumexp_tau(x, tau).unwrap();
        let grads = tape.backward(out).unwrap();
        let g = grads.get(x).unwrap();
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = xs.iter().map(|&v| (tau * (v - max)).exp()).sum();
        let mut total = 0.0;
        for (i, &v) in xs.iter().enumerate() {
            let expect = (tau * (v - max)).exp() / z;
            assert!((g.data()[i] - expect).abs() < 1e-15, "tau {tau} entry {i}");
            total += g.data()[i];
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let build = || {
        let mut rng = StreamRng::from_seed(99).stream("det");
        let mut tape = Tape::new();
        let a = tape.leaf(rand_matrix(&mut rng, 4, 3, -1.0, 1.0));
        let b = tape.leaf(rand_matrix(&mut rng, 3, 2, -1.0, 1.0));
        let prod = tape.matmul(a, b).unwrap();
        let act = tape.tanh(prod);
        let out = tape.sum(act);
        let grads = tape.backward(out).unwrap();
        (
            grads.get(a).unwrap().data().to_vec(),
            grads.get(b).unwrap().data().to_vec(),
        )
    };
    let (ga1, gb1) = build();
    let (ga2, gb2) = build();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ga1), bits(&ga2));
    assert_eq!(bits(&gb1), bits(&gb2));
}

#[test]
fn primitives_do_not_mutate_inputs() {
    let mut rng = StreamRng::from_seed(5).stream("mut");
    let original = rand_matrix(&mut rng, 3, 3, -1.0, 1.0);
    let mut tape = Tape::new();
    let x = tape.leaf(original.clone());
    let y = tape.leaf(original.clone());
    let _ = tape.matmul(x, y).unwrap();
    let _ = tape.mul(x, y).unwrap();
    let _ = tape.relu(x);
    let _ = tape.exp(x);
    let _ = tape.scatter_rows(x, Rc::new(vec![0, 0, 1]), 2, Reduce::Max).unwrap();
    assert_eq!(tape.value(x).data(), original.data());
    assert_eq!(tape.value(y).data(), original.data());
}
