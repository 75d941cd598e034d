//! Backward passes against central finite differences.

mod common;

use common::{assert_gradients, randomize, small_model};
use cprec::backbone::SharingScheme;
use cprec::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use cprec::partition::Partition;
use cprec::softmax::TreeSoftmax;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn store_with(shapes: &[(&str, Vec<usize>)], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|(name, shape)| store.add(*name, Tensor::zeros(shape.clone())))
        .collect();
    randomize(&mut store, seed, 1.0);
    (store, ids)
}

/// Contracts an `m×n` output with a fixed pseudo-random `n×1` probe and sums.
fn probe(tape: &mut Tape<'_>, y: Var) -> Var {
    let n = tape.value(y).cols();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
    let w = tape.constant(Tensor::new(vec![n, 1], w).unwrap());
    let z = tape.matmul(y, w).unwrap();
    tape.sum(z)
}

#[test]
fn matmul_and_add() {
    let (store, ids) = store_with(&[("a", vec![3, 4]), ("b", vec![4, 5]), ("c", vec![3, 5])], 1);
    assert_gradients(&store, TOL, |t| {
        let a = t.param(ids[0]);
        let b = t.param(ids[1]);
        let c = t.param(ids[2]);
        let ab = t.matmul(a, b).unwrap();
        let y = t.add(ab, c).unwrap();
        probe(t, y)
    });
}

#[test]
fn gather_with_repeats_and_assemble() {
    let (store, ids) = store_with(&[("src", vec![5, 3]), ("other", vec![2, 3])], 2);
    assert_gradients(&store, TOL, |t| {
        let src = t.param(ids[0]);
        let g = t.gather_rows(src, &[4, 1, 4, 0]).unwrap();
        let o = t.param(ids[1]);
        let y = t.assemble_rows(7, 3, vec![(g, vec![0, 2, 3, 6]), (o, vec![5, 1])]).unwrap();
        probe(t, y)
    });
}

#[test]
fn relu_and_scale() {
    let (store, ids) = store_with(&[("x", vec![4, 6])], 3);
    assert_gradients(&store, TOL, |t| {
        let x = t.param(ids[0]);
        let r = t.relu(x);
        let s = t.scale(r, -1.7);
        probe(t, s)
    });
}

#[test]
fn dilated_causal_conv() {
    for dilation in [1, 2, 3] {
        let (store, ids) = store_with(
            &[("x", vec![7, 3]), ("k", vec![3, 3, 2]), ("b", vec![2])],
            10 + dilation as u64,
        );
        assert_gradients(&store, TOL, |t| {
            let x = t.param(ids[0]);
            let k = t.param(ids[1]);
            let b = t.param(ids[2]);
            let y = t.dilated_causal_conv1d(x, k, b, dilation).unwrap();
            probe(t, y)
        });
    }
}

#[test]
fn layer_norm() {
    let (store, ids) = store_with(&[("x", vec![4, 5]), ("g", vec![5]), ("b", vec![5])], 4);
    assert_gradients(&store, TOL, |t| {
        let x = t.param(ids[0]);
        let g = t.param(ids[1]);
        let b = t.param(ids[2]);
        let y = t.layer_norm(x, g, b).unwrap();
        probe(t, y)
    });
}

#[test]
fn softmax_cross_entropy() {
    let (store, ids) = store_with(&[("logits", vec![4, 6])], 5);
    assert_gradients(&store, TOL, |t| {
        let l = t.param(ids[0]);
        t.softmax_cross_entropy(l, &[0, 5, 2, 2]).unwrap()
    });
}

#[test]
fn block_embedding_lookup() {
    let model = small_model(12, 4, 3, SharingScheme::None, 6);
    let mut store = model.store().clone();
    randomize(&mut store, 6, 0.7);
    let ids = [0, 3, 4, 12, 1, 4, 0, 9];
    assert_gradients(&store, TOL, |t| {
        let e = model.embedding().lookup_batch(t, &ids).unwrap();
        probe(t, e)
    });
}

#[test]
fn tree_softmax_loss_over_all_clusters() {
    let partition = Partition::new(vec![3, 4, 6], vec![5, 3, 2]).unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tree = TreeSoftmax::new(&mut store, partition, &mut rng);
    let h = store.add("h", Tensor::zeros(vec![6, 5]));
    randomize(&mut store, 7, 0.8);
    let targets = [1, 4, 13, 7, 3, 8];
    assert_gradients(&store, TOL, |t| {
        let ctx = t.param(h);
        tree.loss(t, ctx, &targets).unwrap()
    });
}

#[test]
fn shared_backbone_units_accumulate() {
    for scheme in SharingScheme::ALL {
        let model = small_model(10, 4, 2, scheme, 8);
        let mut store = model.store().clone();
        randomize(&mut store, 8, 0.6);
        let seq = [3, 1, 0, 7, 10, 2, 5, 5];
        assert_gradients(&store, 1e-5, |t| {
            model.sequence_loss(t, &seq).unwrap().unwrap().loss
        });
    }
}
