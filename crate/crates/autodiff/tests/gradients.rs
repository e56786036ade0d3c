use hpinn_autodiff::check::{central_difference, worst_relative_error};
use hpinn_autodiff::{Graph, OpKind, Result, Tensor, Value};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Reduce an output to a scalar through fixed random weights so every
/// output entry receives a distinct adjoint.
fn weighted_sum<'g>(y: Value<'g>, seed: u64) -> Result<Value<'g>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = y.graph().constant(random(&mut rng, y.rows(), y.cols(), -1.0, 1.0));
    y.mul(w)?.sum()
}

fn check_op(name: &str, inputs: Vec<Tensor>, build: impl for<'g> Fn(&[Value<'g>]) -> Result<Value<'g>>) {
    let g = Graph::new();
    let vals: Vec<Value<'_>> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let loss = weighted_sum(build(&vals).unwrap(), 99).unwrap();
    let grads = g.backward(&loss).unwrap();
    let fd = central_difference(&inputs, 1e-5, |_, v| Ok(weighted_sum(build(v)?, 99)?.item())).unwrap();
    for (v, numeric) in vals.iter().zip(&fd) {
        let err = worst_relative_error(grads.get(v).unwrap(), numeric, 1e-7);
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut r = |rows, cols| random(&mut rng, rows, cols, -1.0, 1.0);
    let (a, b, m, row, col, s) = (r(3, 4), r(3, 4), r(4, 2), r(1, 4), r(3, 1), r(1, 1));
    let pos = a.map(|x| x.abs() + 0.5);

    check_op("add", vec![a.clone(), b.clone()], |v| v[0].add(v[1]));
    check_op("sub", vec![a.clone(), b.clone()], |v| v[0].sub(v[1]));
    check_op("mul", vec![a.clone(), b.clone()], |v| v[0].mul(v[1]));
    check_op("div", vec![a.clone(), pos.clone()], |v| v[0].div(v[1]));
    check_op("neg", vec![a.clone()], |v| v[0].neg());
    check_op("matmul", vec![a.clone(), m.clone()], |v| v[0].matmul(v[1]));
    check_op("transpose", vec![a.clone()], |v| v[0].t());
    check_op("exp", vec![a.clone()], |v| v[0].exp());
    check_op("ln", vec![pos.clone()], |v| v[0].ln());
    check_op("tanh", vec![a.clone()], |v| v[0].tanh());
    check_op("sigmoid", vec![a.clone()], |v| v[0].sigmoid());
    check_op("relu", vec![a.clone()], |v| v[0].relu());
    check_op("pow_int", vec![a.clone()], |v| v[0].powi(3));
    check_op("pow_int_neg", vec![pos.clone()], |v| v[0].powi(-2));
    check_op("powf", vec![pos.clone()], |v| v[0].powf(-0.5));
    check_op("sum", vec![a.clone()], |v| v[0].sum());
    check_op("mean", vec![a.clone()], |v| v[0].mean());
    check_op("sum_rows", vec![a.clone()], |v| v[0].sum_rows());
    check_op("sum_cols", vec![a.clone()], |v| v[0].sum_cols());
    check_op("softmax_rows", vec![a.clone()], |v| v[0].softmax_rows());
    check_op("normalize_rows", vec![a.clone()], |v| v[0].normalize_rows(1e-5));
    check_op("concat_rows", vec![a.clone(), row.clone()], |v| v[0].graph().concat_rows(&[v[0], v[1]]));
    check_op("concat_cols", vec![a.clone(), col.clone()], |v| v[0].graph().concat_cols(&[v[0], v[1]]));
    check_op("slice", vec![a.clone()], |v| v[0].slice(1..3, 1..4));
    check_op("scale", vec![a.clone()], |v| v[0].scale(-2.5));
    check_op("add_scalar", vec![a.clone()], |v| v[0].add_scalar(0.7));
    check_op("broadcast_add_row", vec![a.clone(), row.clone()], |v| v[0].add_row(v[1]));
    check_op("broadcast_row", vec![row.clone()], |v| v[0].broadcast(3, 4));
    check_op("broadcast_col", vec![col.clone()], |v| v[0].broadcast(3, 4));
    check_op("broadcast_scalar", vec![s.clone()], |v| v[0].broadcast(3, 4));
    check_op("reshape", vec![a.clone()], |v| v[0].reshape(2, 6));
    check_op("tile_rows", vec![a.clone()], |v| v[0].tile_rows(3));
    check_op("apply", vec![a.clone(), b.clone()], |v| v[0].graph().apply(OpKind::Mul, &[v[0], v[1]]));
}

#[test]
fn reused_nodes_accumulate_adjoints() {
    let x = Tensor::row(vec![0.3, -0.8]);
    check_op("reuse", vec![x], |v| v[0].mul(v[0])?.add(v[0].tanh()?)?.mul(v[0]));
}

#[test]
fn three_layer_tanh_networks() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, 5, 3, -1.0, 1.0);
        let params = vec![
            random(&mut rng, 3, 6, -1.0, 1.0),
            random(&mut rng, 1, 6, -0.5, 0.5),
            random(&mut rng, 6, 6, -1.0, 1.0),
            random(&mut rng, 1, 6, -0.5, 0.5),
            random(&mut rng, 6, 1, -1.0, 1.0),
            random(&mut rng, 1, 1, -0.5, 0.5),
        ];
        fn forward<'g>(v: &[Value<'g>], x: &Tensor) -> Result<Value<'g>> {
            let g = v[0].graph();
            let mut h = g.constant(x.clone());
            for layer in 0..3 {
                h = h.matmul(v[2 * layer])?.add_row(v[2 * layer + 1])?;
                if layer < 2 {
                    h = h.tanh()?;
                }
            }
            h.powi(2)?.mean()
        }
        let g = Graph::new();
        let vals: Vec<Value<'_>> = params.iter().map(|p| g.parameter(p.clone())).collect();
        let loss = forward(&vals, &x).unwrap();
        let grads = g.backward(&loss).unwrap();
        let fd = central_difference(&params, 1e-5, |_, v| Ok(forward(v, &x)?.item())).unwrap();
        for (v, numeric) in vals.iter().zip(&fd) {
            let err = worst_relative_error(grads.get(v).unwrap(), numeric, 1e-7);
            assert!(err < 1e-4, "seed {seed}: {err:e}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let g = Graph::new();
        let y = g.constant(Tensor::new(3, 4, data)).softmax_rows().unwrap().tensor();
        for r in 0..3 {
            let row = y.row_slice(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn matmul_matches_triple_loop(a in proptest::collection::vec(-1.0f64..1.0, 6),
                                  b in proptest::collection::vec(-1.0f64..1.0, 12)) {
        let g = Graph::new();
        let (ta, tb) = (Tensor::new(2, 3, a), Tensor::new(3, 4, b));
        let y = g.constant(ta.clone()).matmul(g.constant(tb.clone())).unwrap().tensor();
        prop_assert_eq!(y.shape(), (2, 4));
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += ta.get(i, k) * tb.get(k, j);
                }
                let got = y.get(i, j);
                prop_assert!((got - acc).abs() <= 1e-12 * acc.abs().max(1e-300) || (got - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalize_rows_standardizes(data in proptest::collection::vec(-10.0f64..10.0, 8)) {
        prop_assume!(data[..4].iter().any(|&v| (v - data[0]).abs() > 1e-2));
        prop_assume!(data[4..].iter().any(|&v| (v - data[4]).abs() > 1e-2));
        let g = Graph::new();
        let y = g.constant(Tensor::new(2, 4, data)).normalize_rows(0.0).unwrap().tensor();
        for r in 0..2 {
            let row = y.row_slice(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            prop_assert!(mean.abs() < 1e-7);
            prop_assert!((var - 1.0).abs() < 1e-7);
        }
    }
}
