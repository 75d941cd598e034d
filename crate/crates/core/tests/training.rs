mod common;

use cprec::backbone::SharingScheme;
use cprec::corpus::Corpus;
use cprec::model::{CpRec, ModelConfig};
use cprec::numerics::Adam;
use cprec::trainer::{evaluate, train, train_step, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ten sequences over twenty items; each starts with its own item, so every
/// later target is determined by the prefix.
pub fn memorizable() -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let raw: Vec<Vec<String>> = (0..10)
        .map(|i| {
            let mut s = vec![format!("it{}", i + 1)];
            s.extend((0..7).map(|_| format!("it{}", rng.gen_range(1..=20))));
            s
        })
        .collect();
    let mut raw = raw;
    // make sure all twenty items occur
    raw[9][7] = "it20".into();
    for (j, s) in raw.iter_mut().enumerate().take(9) {
        s[7] = format!("it{}", 11 + j);
    }
    Corpus::from_raw(&raw, 8).unwrap()
}

fn model_for(corpus: &Corpus, scheme: SharingScheme) -> CpRec {
    let k = corpus.num_items();
    CpRec::new(ModelConfig {
        items: k,
        width: 16,
        cluster_sizes: vec![4, k - 4],
        ranks: vec![16, 8],
        kernel_width: 3,
        dilations: vec![1, 2, 4, 8],
        scheme,
        seq_len: 8,
        seed: 1,
    })
    .unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 10,
        learning_rate: 0.01,
        max_epochs: epochs,
        max_steps: None,
        seed: 5,
        convergence_tol: 1e-4,
        convergence_window: 0,
    }
}

#[test]
fn memorizes_a_tiny_corpus() {
    let corpus = memorizable();
    assert_eq!(corpus.num_items(), 20);
    let mut m = model_for(&corpus, SharingScheme::None);
    let report = train(&mut m, &corpus, &config(300), |_| {}).unwrap();
    let last = *report.losses().last().unwrap();
    assert!(last < 0.05, "final loss {last}");
    assert!(report.losses().iter().all(|&l| l >= 0.0));
    let metrics = evaluate(&m, &corpus, &[5]).unwrap();
    assert!(metrics.at(5).unwrap().hr > 0.95);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let corpus = memorizable();
    let run = || {
        let mut m = model_for(&corpus, SharingScheme::AdjacentLayer);
        let r = train(&mut m, &corpus, &config(5), |_| {}).unwrap();
        r.losses().iter().map(|l| l.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn convergence_window_stops_a_plateau() {
    let corpus = memorizable();
    let mut m = model_for(&corpus, SharingScheme::None);
    let cfg = TrainConfig {
        learning_rate: 1e-9,
        convergence_window: 3,
        ..config(50)
    };
    let report = train(&mut m, &corpus, &cfg, |_| {}).unwrap();
    assert!(report.converged);
    assert_eq!(report.epochs.len(), 4);
}

#[test]
fn loss_masks_padding_targets() {
    let corpus = memorizable();
    let mut m = model_for(&corpus, SharingScheme::None);
    let adam = Adam::default();
    let padded = [0usize; 8];
    let real = corpus.sequences[0].clone();
    let mut alone = model_for(&corpus, SharingScheme::None);
    let a = train_step(&mut alone, &adam, &[&real[..]]).unwrap();
    let b = train_step(&mut m, &adam, &[&real[..], &padded[..]]).unwrap();
    assert_eq!((a.loss_sum, a.targets), (b.loss_sum, b.targets));
    for ((_, x), (_, y)) in alone.store().iter().zip(m.store().iter()) {
        assert_eq!(x.value, y.value);
    }
}
