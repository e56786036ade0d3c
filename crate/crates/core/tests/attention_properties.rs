use hpinn_autodiff::check::close;
use hpinn_autodiff::{Graph, Tensor};
use hpinn_core::encoder::{layer_norm, AttentionBlock};
use hpinn_core::params::ParamStore;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 6;

fn block(seed: u64) -> (ParamStore, AttentionBlock) {
    let mut store = ParamStore::new();
    let blk = AttentionBlock::new(&mut store, "blk", D, 12, &mut ChaCha8Rng::seed_from_u64(seed));
    (store, blk)
}

fn tokens(seed: u64, n: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(n, D, |_, _| rng.random_range(-2.0..2.0))
}

/// Output rows and the attention matrix of one sequence.
fn run(store: &ParamStore, blk: &AttentionBlock, x: &Tensor) -> (Tensor, Tensor, Tensor) {
    let g = Graph::new();
    let b = store.bind(&g);
    let trace = blk.forward_traced(&b, g.constant(x.clone()), x.rows()).unwrap();
    (
        (*trace.output.tensor()).clone(),
        (*trace.probabilities[0].tensor()).clone(),
        (*trace.attention.tensor()).clone(),
    )
}

fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    Tensor::from_fn(x.rows(), x.cols(), |r, c| x.get(perm[r], c))
}

proptest! {
    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), n in 1usize..9) {
        let (store, blk) = block(seed);
        let (_, p, _) = run(&store, &blk, &tokens(seed ^ 1, n));
        prop_assert_eq!(p.shape(), (n, n));
        for r in 0..n {
            prop_assert!(p.row_slice(r).iter().all(|&v| v >= 0.0));
            prop_assert!((p.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_tokens_permutes_outputs(seed in any::<u64>(), n in 1usize..=5, shuffle in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (store, blk) = block(seed);
        let x = tokens(seed.wrapping_add(3), n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let (y, _, _) = run(&store, &blk, &x);
        let (yp, _, _) = run(&store, &blk, &permute_rows(&x, &perm));
        let expected = permute_rows(&y, &perm);
        for (a, b) in yp.data().iter().zip(expected.data()) {
            prop_assert!(close(*a, *b, 1e-10, 1e-12), "{} vs {}", a, b);
        }
    }

    #[test]
    fn identical_tokens_give_identical_rows(seed in any::<u64>(), n in 2usize..7) {
        let (store, blk) = block(seed);
        let row = tokens(seed ^ 7, 1);
        let x = Tensor::from_fn(n, D, |_, c| row.get(0, c));
        let (y, p, _) = run(&store, &blk, &x);
        for r in 1..n {
            prop_assert_eq!(y.row_slice(r), y.row_slice(0));
            for c in 0..n {
                prop_assert!((p.get(r, c) - 1.0 / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(data in prop::collection::vec(-50.0f64..50.0, 3 * D)) {
        let x = Tensor::new(3, D, data);
        for r in 0..3 {
            let row = x.row_slice(r);
            let m = row.iter().sum::<f64>() / D as f64;
            prop_assume!(row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (D as f64) > 1e-2);
        }
        let g = Graph::new();
        let y = layer_norm(g.constant(x), g.constant(Tensor::filled(1, D, 1.0)), g.constant(Tensor::zeros(1, D)))
            .unwrap()
            .tensor();
        for r in 0..3 {
            let row = y.row_slice(r);
            let m = row.iter().sum::<f64>() / D as f64;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / D as f64;
            prop_assert!(m.abs() < 1e-9);
            // eps 1e-5 against a variance of at least 1e-2
            prop_assert!((v - 1.0).abs() < 1e-3);
        }
    }
}

#[test]
fn zero_query_and_key_weights_average_the_values() {
    let (mut store, blk) = block(21);
    *store.get_mut(blk.wq) = Tensor::zeros(D, D);
    *store.get_mut(blk.wk) = Tensor::zeros(D, D);
    let x = tokens(22, 5);
    let (_, p, attention) = run(&store, &blk, &x);
    for v in p.data() {
        assert!((v - 0.2).abs() < 1e-15);
    }
    let wv = store.get(blk.wv);
    for c in 0..D {
        let mean: f64 = (0..5).map(|r| (0..D).map(|k| x.get(r, k) * wv.get(k, c)).sum::<f64>()).sum::<f64>() / 5.0;
        for r in 0..5 {
            assert!(close(attention.get(r, c), mean, 1e-12, 1e-14));
        }
    }
}

#[test]
fn single_token_attends_to_itself() {
    let (store, blk) = block(30);
    let x = tokens(31, 1);
    let (_, p, attention) = run(&store, &blk, &x);
    assert_eq!(p.data(), &[1.0]);
    let wv = store.get(blk.wv);
    for c in 0..D {
        let v: f64 = (0..D).map(|k| x.get(0, k) * wv.get(k, c)).sum();
        assert!(close(attention.get(0, c), v, 1e-12, 1e-14));
    }
}

#[test]
fn stacked_sequences_match_separate_runs() {
    let (store, blk) = block(40);
    let a = tokens(41, 4);
    let b2 = tokens(42, 4);
    let stacked = Tensor::from_fn(8, D, |r, c| if r < 4 { a.get(r, c) } else { b2.get(r - 4, c) });
    let g = Graph::new();
    let b = store.bind(&g);
    let y = blk.forward(&b, g.constant(stacked), 4).unwrap().tensor();
    let (ya, _, _) = run(&store, &blk, &a);
    let (yb, _, _) = run(&store, &blk, &b2);
    for r in 0..4 {
        assert_eq!(y.row_slice(r), ya.row_slice(r));
        assert_eq!(y.row_slice(r + 4), yb.row_slice(r));
    }
}

#[test]
fn ragged_token_count_is_rejected() {
    let (store, blk) = block(50);
    let g = Graph::new();
    let b = store.bind(&g);
    assert!(blk.forward(&b, g.constant(tokens(51, 5)), 2).is_err());
}
