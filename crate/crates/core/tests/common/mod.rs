#![allow(dead_code)]

use cprec::backbone::SharingScheme;
use cprec::model::{CpRec, ModelConfig};
use cprec::numerics::{Gradients, ParamStore, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Overwrites every parameter with uniform values in `[-scale, scale]` so
/// that no gain is exactly one and no pre-activation sits on a relu kink.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.tensor_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb < 1e-12 {
        0.0
    } else {
        diff / (na + nb)
    }
}

fn eval_loss<F>(store: &ParamStore, build: &F) -> f64
where
    F: Fn(&mut Tape<'_>) -> Var,
{
    let mut tape = Tape::new(store);
    let loss = build(&mut tape);
    tape.value(loss).item().unwrap()
}

/// Compares backward gradients of every parameter against central finite
/// differences. Returns `(name, relative error)` per parameter tensor.
pub fn gradient_errors<F>(store: &ParamStore, build: F) -> Vec<(String, f64)>
where
    F: Fn(&mut Tape<'_>) -> Var,
{
    let mut grads = Gradients::new();
    {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        tape.backward(loss, &mut grads).unwrap();
    }
    let mut work = store.clone();
    let mut out = Vec::new();
    for (id, param) in store.iter() {
        let n = param.value.len();
        let analytic: Vec<f64> = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let mut numeric = vec![0.0; n];
        for i in 0..n {
            let orig = work.tensor(id).data()[i];
            work.tensor_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = eval_loss(&work, &build);
            work.tensor_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = eval_loss(&work, &build);
            work.tensor_mut(id).data_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * FD_STEP);
        }
        out.push((param.name.clone(), relative_error(&analytic, &numeric)));
    }
    out
}

pub fn assert_gradients<F>(store: &ParamStore, tol: f64, build: F)
where
    F: Fn(&mut Tape<'_>) -> Var,
{
    for (name, err) in gradient_errors(store, build) {
        assert!(err < tol, "{name}: relative error {err:e}");
    }
}

/// Small composed model: `items` items, width `d`, two-cluster partition.
pub fn small_model(items: usize, d: usize, head: usize, scheme: SharingScheme, seed: u64) -> CpRec {
    CpRec::new(ModelConfig {
        items,
        width: d,
        cluster_sizes: vec![head, items - head],
        ranks: vec![d, (d / 2).max(1)],
        kernel_width: 3,
        dilations: vec![1, 2, 1, 2],
        scheme,
        seq_len: 8,
        seed,
    })
    .unwrap()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, len: usize, items: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(1..=items)).collect()
}
