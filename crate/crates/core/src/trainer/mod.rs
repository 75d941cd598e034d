//! Teacher-forced training, top-N evaluation and checkpointing.

mod checkpoint;
mod metrics;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError, MAGIC, VERSION};
pub use metrics::{evaluate, exhaustive_rank, Metrics, PopularityRanker, RankMetrics};

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::model::{CpRec, ModelError};
use crate::numerics::{Adam, Gradients, NumericsError, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Stop when the loss improved by less than this over `convergence_window` epochs.
    pub convergence_tol: f64,
    pub convergence_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-3,
            max_epochs: 20,
            max_steps: None,
            seed: 0,
            convergence_tol: 1e-4,
            convergence_window: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub loss_sum: f64,
    pub targets: usize,
    pub softmax_time: Duration,
}

impl StepStats {
    pub fn mean_loss(&self) -> f64 {
        if self.targets == 0 {
            0.0
        } else {
            self.loss_sum / self.targets as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub steps: usize,
    pub targets: usize,
    pub elapsed: Duration,
    pub softmax_time: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub converged: bool,
    pub elapsed: Duration,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn steps(&self) -> usize {
        self.epochs.iter().map(|e| e.steps).sum()
    }

    /// Mean forward time of the output layer per optimizer step.
    pub fn softmax_seconds_per_step(&self) -> f64 {
        let total: f64 = self.epochs.iter().map(|e| e.softmax_time.as_secs_f64()).sum();
        total / self.steps().max(1) as f64
    }
}

/// Loss and gradients of one batch, averaged over its non-padding targets.
pub fn batch_gradients(
    model: &CpRec,
    batch: &[&[usize]],
) -> Result<(StepStats, Gradients), ModelError> {
    let total: usize = batch
        .iter()
        .map(|s| s.iter().skip(1).filter(|&&x| x != 0).count())
        .sum();
    let mut stats = StepStats::default();
    let mut grads = Gradients::new();
    if total == 0 {
        return Ok((stats, grads));
    }
    let scale = 1.0 / total as f64;
    for seq in batch {
        let mut tape = Tape::new(model.store());
        let Some(out) = model.sequence_loss(&mut tape, seq)? else {
            continue;
        };
        let value = tape.value(out.loss).item()?;
        if !value.is_finite() {
            return Err(NumericsError::NonFinite("training loss").into());
        }
        let scaled = tape.scale(out.loss, scale);
        tape.backward(scaled, &mut grads)?;
        stats.loss_sum += value;
        stats.targets += out.targets;
        stats.softmax_time += out.softmax_time;
    }
    Ok((stats, grads))
}

/// One optimizer step on `batch`.
pub fn train_step(model: &mut CpRec, adam: &Adam, batch: &[&[usize]]) -> Result<StepStats, ModelError> {
    let (stats, grads) = batch_gradients(model, batch)?;
    if stats.targets > 0 {
        adam.step(model.store_mut(), grads);
    }
    Ok(stats)
}

fn check_compatible(model: &CpRec, corpus: &Corpus) -> Result<(), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::Config("training corpus is empty".into()));
    }
    if corpus.num_items() != model.num_items() {
        return Err(ModelError::Config(format!(
            "corpus has {} items but model expects {}",
            corpus.num_items(),
            model.num_items()
        )));
    }
    Ok(())
}

/// One shuffled pass over `corpus`; returns the mean loss per target.
pub fn train_epoch(
    model: &mut CpRec,
    adam: &Adam,
    corpus: &Corpus,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    max_steps: Option<usize>,
) -> Result<EpochStats, ModelError> {
    check_compatible(model, corpus)?;
    if batch_size == 0 {
        return Err(ModelError::Config("batch size must be positive".into()));
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(rng);
    let mut loss_sum = 0.0;
    let mut targets = 0;
    let mut steps = 0;
    let mut softmax_time = Duration::ZERO;
    for chunk in order.chunks(batch_size) {
        if max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        let batch: Vec<&[usize]> = chunk.iter().map(|&i| corpus.sequences[i].as_slice()).collect();
        let s = train_step(model, adam, &batch)?;
        loss_sum += s.loss_sum;
        targets += s.targets;
        softmax_time += s.softmax_time;
        steps += 1;
    }
    Ok(EpochStats {
        epoch: 0,
        loss: if targets == 0 { 0.0 } else { loss_sum / targets as f64 },
        steps,
        targets,
        elapsed: start.elapsed(),
        softmax_time,
    })
}

/// Trains until the loss stops improving or a cap is hit, reporting every epoch.
pub fn train(
    model: &mut CpRec,
    corpus: &Corpus,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport, ModelError> {
    let adam = Adam::new(config.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = Instant::now();
    let mut epochs: Vec<EpochStats> = Vec::new();
    let mut converged = false;
    let mut steps_left = config.max_steps;
    for epoch in 1..=config.max_epochs {
        if steps_left == Some(0) {
            break;
        }
        let mut stats = train_epoch(model, &adam, corpus, config.batch_size, &mut rng, steps_left)?;
        stats.epoch = epoch;
        if let Some(left) = steps_left.as_mut() {
            *left -= stats.steps.min(*left);
        }
        on_epoch(&stats);
        epochs.push(stats);
        let w = config.convergence_window;
        if w > 0 && epochs.len() > w {
            let then = epochs[epochs.len() - 1 - w].loss;
            let now = epochs[epochs.len() - 1].loss;
            if then - now < config.convergence_tol {
                converged = true;
                break;
            }
        }
    }
    Ok(TrainReport {
        epochs,
        converged,
        elapsed: start.elapsed(),
    })
}

/// Mean wall time of `steps` optimizer steps after `warmup` untimed ones,
/// cycling through `batches`.
pub fn benchmark_step_time(
    model: &mut CpRec,
    adam: &Adam,
    batches: &[Vec<Vec<usize>>],
    warmup: usize,
    steps: usize,
) -> Result<Duration, ModelError> {
    if batches.is_empty() || steps == 0 {
        return Err(ModelError::Config("benchmark needs batches and steps".into()));
    }
    let mut cycle = batches.iter().cycle();
    let mut run = |model: &mut CpRec| -> Result<(), ModelError> {
        let b = cycle.next().unwrap();
        let refs: Vec<&[usize]> = b.iter().map(Vec::as_slice).collect();
        train_step(model, adam, &refs)?;
        Ok(())
    };
    for _ in 0..warmup {
        run(model)?;
    }
    let start = Instant::now();
    for _ in 0..steps {
        run(model)?;
    }
    Ok(start.elapsed() / steps as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::SharingScheme;
    use crate::model::ModelConfig;

    fn tiny() -> (CpRec, Corpus) {
        let raw: Vec<Vec<String>> = (0..6)
            .map(|i| (0..5).map(|j| format!("t{}", (i + j) % 8)).collect())
            .collect();
        let corpus = Corpus::from_raw(&raw, 5).unwrap();
        let k = corpus.num_items();
        let model = CpRec::new(ModelConfig {
            items: k,
            width: 4,
            cluster_sizes: vec![2, k - 2],
            ranks: vec![4, 2],
            kernel_width: 2,
            dilations: vec![1, 2],
            scheme: SharingScheme::None,
            seq_len: 5,
            seed: 3,
        })
        .unwrap();
        (model, corpus)
    }

    #[test]
    fn padding_only_batch_is_inert() {
        let (mut model, _) = tiny();
        let before = model.store().clone();
        let pad = [0usize; 5];
        let stats = train_step(&mut model, &Adam::default(), &[&pad[..]]).unwrap();
        assert_eq!(stats.loss_sum, 0.0);
        assert_eq!(stats.targets, 0);
        for (id, p) in before.iter() {
            assert_eq!(p.value, model.store().tensor(id).clone());
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let cfg = TrainConfig {
            batch_size: 2,
            max_epochs: 3,
            seed: 4,
            convergence_window: 0,
            ..TrainConfig::default()
        };
        let (mut a, corpus) = tiny();
        let (mut b, _) = tiny();
        let ra = train(&mut a, &corpus, &cfg, |_| {}).unwrap();
        let rb = train(&mut b, &corpus, &cfg, |_| {}).unwrap();
        assert_eq!(ra.losses(), rb.losses());
        assert!(ra.losses().iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn rejects_mismatched_corpus() {
        let (mut model, corpus) = tiny();
        let other = Corpus::from_raw(&[vec!["a".to_string(), "b".to_string()]], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(train_epoch(&mut model, &Adam::default(), &other, 2, &mut rng, None).is_err());
        let empty = Corpus {
            sequences: vec![],
            ..corpus
        };
        assert!(train_epoch(&mut model, &Adam::default(), &empty, 2, &mut rng, None).is_err());
    }

    #[test]
    fn max_steps_caps_training() {
        let (mut model, corpus) = tiny();
        let cfg = TrainConfig {
            batch_size: 1,
            max_epochs: 10,
            max_steps: Some(4),
            convergence_window: 0,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &corpus, &cfg, |_| {}).unwrap();
        assert_eq!(report.steps(), 4);
    }
}
