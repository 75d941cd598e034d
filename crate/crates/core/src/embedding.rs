//! Input-side block-wise adaptive embedding.
//!
//! The head cluster keeps a full-width table `E¹ (k₁×d)`. Every tail cluster
//! `j` stores a narrow table `Êʲ (k_j×d_j)` and a projection `Wʲ (d_j×d)`, so
//! an item in cluster `j` embeds as `Êʲ_g · Wʲ`. Id 0 is padding and always
//! embeds to the zero vector.

use rand::Rng;

use crate::numerics::{NumericsError, ParamId, ParamStore, Result, Tape, Tensor, Var};
use crate::partition::Partition;

/// Half-width of the uniform initializer used by the embedding and softmax tables.
pub const INIT_SCALE: f64 = 0.05;

pub(crate) fn uniform_tensor<R: Rng>(rng: &mut R, shape: Vec<usize>, scale: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-scale..=scale)).collect();
    Tensor::new(shape, data).expect("shape matches length")
}

#[derive(Clone, Debug)]
struct TailBlock {
    factor: ParamId,
    projection: ParamId,
}

#[derive(Clone, Debug)]
pub struct BlockEmbedding {
    partition: Partition,
    head: ParamId,
    tails: Vec<TailBlock>,
}

impl BlockEmbedding {
    pub fn new<R: Rng>(store: &mut ParamStore, partition: Partition, rng: &mut R) -> Self {
        let d = partition.width();
        let head = store.add(
            "embedding.head",
            uniform_tensor(rng, vec![partition.sizes()[0], d], INIT_SCALE),
        );
        let tails = (1..partition.num_clusters())
            .map(|j| {
                let (k, r) = (partition.sizes()[j], partition.ranks()[j]);
                TailBlock {
                    factor: store.add(
                        format!("embedding.factor{}", j + 1),
                        uniform_tensor(rng, vec![k, r], INIT_SCALE),
                    ),
                    projection: store.add(
                        format!("embedding.projection{}", j + 1),
                        uniform_tensor(rng, vec![r, d], INIT_SCALE),
                    ),
                }
            })
            .collect();
        Self {
            partition,
            head,
            tails,
        }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn width(&self) -> usize {
        self.partition.width()
    }

    pub fn head(&self) -> ParamId {
        self.head
    }

    /// `(Êʲ, Wʲ)` for 0-based tail cluster `cluster ≥ 1`.
    pub fn tail(&self, cluster: usize) -> (ParamId, ParamId) {
        let t = &self.tails[cluster - 1];
        (t.factor, t.projection)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.head];
        for t in &self.tails {
            ids.push(t.factor);
            ids.push(t.projection);
        }
        ids
    }

    fn check_id(&self, x: usize) -> Result<()> {
        let k = self.partition.num_items();
        if x > k {
            return Err(NumericsError::Index {
                index: x,
                bound: k + 1,
            });
        }
        Ok(())
    }

    /// Embedding of a single item, computed directly from the store.
    pub fn lookup(&self, store: &ParamStore, x: usize) -> Result<Vec<f64>> {
        self.check_id(x)?;
        let d = self.width();
        let Some((j, g)) = self.partition.cluster_of(x) else {
            return Ok(vec![0.0; d]);
        };
        if j == 0 {
            return Ok(store.tensor(self.head).row(g).to_vec());
        }
        let (factor, projection) = self.tail(j);
        let row = store.tensor(factor).row(g);
        let w = store.tensor(projection);
        let mut out = vec![0.0; d];
        for (p, &a) in row.iter().enumerate() {
            crate::numerics::kernels::axpy(a, w.row(p), &mut out);
        }
        Ok(out)
    }

    /// Embeds a whole id sequence as a `t×d` matrix, one gather (and one
    /// projection) per cluster present in the sequence.
    pub fn lookup_batch(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        let n = self.partition.num_clusters();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut positions: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (pos, &x) in ids.iter().enumerate() {
            self.check_id(x)?;
            if let Some((j, g)) = self.partition.cluster_of(x) {
                rows[j].push(g);
                positions[j].push(pos);
            }
        }
        let mut parts = Vec::new();
        for j in 0..n {
            if rows[j].is_empty() {
                continue;
            }
            let block = if j == 0 {
                let head = tape.param(self.head);
                tape.gather_rows(head, &rows[j])?
            } else {
                let (factor, projection) = self.tail(j);
                let f = tape.param(factor);
                let narrow = tape.gather_rows(f, &rows[j])?;
                let w = tape.param(projection);
                tape.matmul(narrow, w)?
            };
            parts.push((block, std::mem::take(&mut positions[j])));
        }
        tape.assemble_rows(ids.len(), self.width(), parts)
    }
}
