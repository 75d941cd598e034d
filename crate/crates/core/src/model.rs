//! The composed recommender: block embedding → backbone → tree softmax.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backbone::{Backbone, SharingScheme};
use crate::embedding::BlockEmbedding;
use crate::numerics::{NumericsError, ParamId, ParamStore, Tape, Var};
use crate::partition::{compression_report, CompressionReport, CountConfig, Partition, PartitionError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("invalid model config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub items: usize,
    pub width: usize,
    pub cluster_sizes: Vec<usize>,
    pub ranks: Vec<usize>,
    pub kernel_width: usize,
    pub dilations: Vec<usize>,
    pub scheme: SharingScheme,
    pub seq_len: usize,
    pub seed: u64,
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ModelError> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| ModelError::Config(format!("{key}: bad integer '{v}'")))
        })
        .collect()
}

impl ModelConfig {
    /// Uncompressed layout: one cluster, no sharing.
    pub fn vanilla(items: usize, width: usize, dilations: Vec<usize>, seed: u64) -> Self {
        Self {
            items,
            width,
            cluster_sizes: vec![items],
            ranks: vec![width],
            kernel_width: 3,
            dilations,
            scheme: SharingScheme::None,
            seq_len: 0,
            seed,
        }
    }

    pub fn partition(&self) -> Result<Partition, ModelError> {
        let p = Partition::new(self.cluster_sizes.clone(), self.ranks.clone())?;
        if p.num_items() != self.items {
            return Err(ModelError::Config(format!(
                "cluster sizes sum to {} but items = {}",
                p.num_items(),
                self.items
            )));
        }
        if p.width() != self.width {
            return Err(ModelError::Config(format!(
                "first rank {} must equal width {}",
                p.width(),
                self.width
            )));
        }
        Ok(p)
    }

    pub fn count_config(&self) -> Result<CountConfig, ModelError> {
        Ok(CountConfig {
            partition: self.partition()?,
            kernel_width: self.kernel_width,
            layers: self.dilations.len(),
            scheme: self.scheme,
        })
    }

    pub fn to_kv(&self) -> String {
        format!(
            "items={}\nwidth={}\ncluster_sizes={}\nranks={}\nkernel_width={}\ndilations={}\nscheme={}\nseq_len={}\nseed={}\n",
            self.items,
            self.width,
            join(&self.cluster_sizes),
            join(&self.ranks),
            self.kernel_width,
            join(&self.dilations),
            self.scheme,
            self.seq_len,
            self.seed
        )
    }

    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let mut get = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("malformed line '{line}'")))?;
            get.insert(k.trim(), v.trim());
        }
        let field = |k: &str| {
            get.get(k)
                .copied()
                .ok_or_else(|| ModelError::Config(format!("missing key '{k}'")))
        };
        let int = |k: &str| -> Result<usize, ModelError> {
            field(k)?
                .parse()
                .map_err(|_| ModelError::Config(format!("{k}: bad integer")))
        };
        Ok(Self {
            items: int("items")?,
            width: int("width")?,
            cluster_sizes: parse_list("cluster_sizes", field("cluster_sizes")?)?,
            ranks: parse_list("ranks", field("ranks")?)?,
            kernel_width: int("kernel_width")?,
            dilations: parse_list("dilations", field("dilations")?)?,
            scheme: field("scheme")?.parse().map_err(ModelError::Config)?,
            seq_len: int("seq_len")?,
            seed: field("seed")?
                .parse()
                .map_err(|_| ModelError::Config("seed: bad integer".into()))?,
        })
    }
}

/// Loss of one sequence plus bookkeeping for the trainer.
pub struct SequenceLoss {
    pub loss: Var,
    pub targets: usize,
    pub softmax_time: Duration,
}

pub struct CpRec {
    config: ModelConfig,
    store: ParamStore,
    embedding: BlockEmbedding,
    backbone: Backbone,
    softmax: crate::softmax::TreeSoftmax,
}

impl CpRec {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        let partition = config.partition()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let embedding = BlockEmbedding::new(&mut store, partition.clone(), &mut rng);
        let backbone = Backbone::new(
            &mut store,
            config.width,
            config.kernel_width,
            &config.dilations,
            config.scheme,
            &mut rng,
        )?;
        let softmax = crate::softmax::TreeSoftmax::new(&mut store, partition, &mut rng);
        Ok(Self {
            config,
            store,
            embedding,
            backbone,
            softmax,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn embedding(&self) -> &BlockEmbedding {
        &self.embedding
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn softmax(&self) -> &crate::softmax::TreeSoftmax {
        &self.softmax
    }

    pub fn num_items(&self) -> usize {
        self.config.items
    }

    /// Context vectors (`t×d`) for an id sequence; row `τ` predicts item `τ+1`.
    pub fn contexts(&self, tape: &mut Tape<'_>, inputs: &[usize]) -> Result<Var, ModelError> {
        let embedded = self.embedding.lookup_batch(tape, inputs)?;
        Ok(self.backbone.forward(tape, embedded)?)
    }

    /// Teacher-forced loss of a padded sequence: inputs `x₁…x_{t−1}`, targets
    /// `x₂…x_t`, skipping padding targets. `None` when every target is padding.
    pub fn sequence_loss(
        &self,
        tape: &mut Tape<'_>,
        sequence: &[usize],
    ) -> Result<Option<SequenceLoss>, ModelError> {
        if sequence.len() < 2 {
            return Ok(None);
        }
        let positions: Vec<usize> = (1..sequence.len()).filter(|&i| sequence[i] != 0).collect();
        if positions.is_empty() {
            return Ok(None);
        }
        let inputs = &sequence[..sequence.len() - 1];
        let contexts = self.contexts(tape, inputs)?;
        let rows: Vec<usize> = positions.iter().map(|&p| p - 1).collect();
        let targets: Vec<usize> = positions.iter().map(|&p| sequence[p]).collect();
        let start = Instant::now();
        let selected = if rows.len() == inputs.len() {
            contexts
        } else {
            tape.gather_rows(contexts, &rows)?
        };
        let loss = self.softmax.loss(tape, selected, &targets)?;
        Ok(Some(SequenceLoss {
            loss,
            targets: targets.len(),
            softmax_time: start.elapsed(),
        }))
    }

    /// Context vector after reading `prefix`, i.e. the last backbone row.
    pub fn context_vector(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
        if prefix.is_empty() {
            return Err(ModelError::Config("empty prefix".into()));
        }
        let mut tape = Tape::new(&self.store);
        let contexts = self.contexts(&mut tape, prefix)?;
        let out = tape.value(contexts);
        Ok(out.row(out.rows() - 1).to_vec())
    }

    pub fn input_param_ids(&self) -> Vec<ParamId> {
        self.embedding.param_ids()
    }

    pub fn middle_param_ids(&self) -> Vec<ParamId> {
        self.backbone.param_ids()
    }

    pub fn output_param_ids(&self) -> Vec<ParamId> {
        self.softmax.param_ids()
    }

    /// Counts from the parameter calculators for this configuration.
    pub fn report(&self) -> Result<CompressionReport, ModelError> {
        Ok(compression_report(&self.config.count_config()?)?)
    }
}
