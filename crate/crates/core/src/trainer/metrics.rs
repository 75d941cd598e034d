use std::fmt;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::model::{CpRec, ModelError};

/// Ranking quality at one cutoff `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankMetrics {
    pub n: usize,
    pub mrr: f64,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub cutoffs: Vec<RankMetrics>,
    pub sequences: usize,
    pub train_seconds: Option<f64>,
    pub softmax_seconds_per_step: Option<f64>,
}

impl Metrics {
    /// Aggregates 1-based ranks (`None` means outside every cutoff) at each `n`.
    pub fn from_ranks(ranks: &[Option<usize>], cutoffs: &[usize]) -> Self {
        let count = ranks.len().max(1) as f64;
        let cutoffs = cutoffs
            .iter()
            .map(|&n| {
                let (mut mrr, mut hr, mut ndcg) = (0.0, 0.0, 0.0);
                for &rank in ranks {
                    if let Some(r) = rank.filter(|&r| r <= n) {
                        mrr += 1.0 / r as f64;
                        hr += 1.0;
                        ndcg += 1.0 / ((r + 1) as f64).log2();
                    }
                }
                RankMetrics {
                    n,
                    mrr: mrr / count,
                    hr: hr / count,
                    ndcg: ndcg / count,
                }
            })
            .collect();
        Self {
            cutoffs,
            sequences: ranks.len(),
            train_seconds: None,
            softmax_seconds_per_step: None,
        }
    }

    pub fn at(&self, n: usize) -> Option<&RankMetrics> {
        self.cutoffs.iter().find(|m| m.n == n)
    }

    pub fn mrr(&self, n: usize) -> Option<f64> {
        self.at(n).map(|m| m.mrr)
    }

    /// One `key=value` per line, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = format!("sequences={}\n", self.sequences);
        for m in &self.cutoffs {
            out += &format!(
                "mrr@{n}={:.6}\nhr@{n}={:.6}\nndcg@{n}={:.6}\n",
                m.mrr,
                m.hr,
                m.ndcg,
                n = m.n
            );
        }
        if let Some(s) = self.train_seconds {
            out += &format!("train_seconds={s:.3}\n");
        }
        if let Some(s) = self.softmax_seconds_per_step {
            out += &format!("softmax_seconds_per_step={s:.6}\n");
        }
        out
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "evaluated {} sequences", self.sequences)?;
        for m in &self.cutoffs {
            writeln!(
                f,
                "@{:<3} MRR {:.4}  HR {:.4}  NDCG {:.4}",
                m.n, m.mrr, m.hr, m.ndcg
            )?;
        }
        Ok(())
    }
}

/// Prefix and target of each evaluable sequence: all but the last position
/// as context, the last position as the item to predict.
fn eval_pairs(corpus: &Corpus) -> Vec<(&[usize], usize)> {
    corpus
        .sequences
        .iter()
        .filter(|s| s.len() >= 2 && *s.last().unwrap() != 0)
        .map(|s| (&s[..s.len() - 1], s[s.len() - 1]))
        .collect()
}

fn check_cutoffs(cutoffs: &[usize], items: usize) -> Result<usize, ModelError> {
    match cutoffs.iter().max() {
        None => Err(ModelError::Config("no top-N cutoffs given".into())),
        Some(_) if cutoffs.contains(&0) => Err(ModelError::Config("top-N cutoffs must be positive".into())),
        Some(&n) if n > items => Err(ModelError::Config(format!(
            "top-N cutoff {n} exceeds the {items} items"
        ))),
        Some(&n) => Ok(n),
    }
}

/// Ranks the final item of every test sequence with early-stop top-N search.
pub fn evaluate(model: &CpRec, test: &Corpus, cutoffs: &[usize]) -> Result<Metrics, ModelError> {
    let max_n = check_cutoffs(cutoffs, model.num_items())?;
    let pairs = eval_pairs(test);
    if pairs.is_empty() {
        return Err(ModelError::Config("test corpus has no evaluable sequences".into()));
    }
    let ranks = pairs
        .par_iter()
        .map(|&(prefix, target)| {
            let h = model.context_vector(prefix)?;
            let list = model.softmax().topn_early_stop(model.store(), &h, max_n)?;
            Ok(list.rank_of(target))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(Metrics::from_ranks(&ranks, cutoffs))
}

/// 1-based rank of `target` in the full distribution, ties to the smaller id.
pub fn exhaustive_rank(probs: &[f64], target: usize) -> usize {
    let p = probs[target - 1];
    1 + probs
        .iter()
        .enumerate()
        .filter(|&(i, &q)| q > p || (q == p && i + 1 < target))
        .count()
}

/// Ranks every item by its frequency in the training data, ignoring context.
#[derive(Clone, Debug)]
pub struct PopularityRanker {
    rank: Vec<usize>,
}

impl PopularityRanker {
    pub fn fit(train: &Corpus) -> Self {
        let k = train.num_items();
        let mut counts = vec![0u64; k + 1];
        for &x in train.sequences.iter().flatten() {
            if x != 0 && x <= k {
                counts[x] += 1;
            }
        }
        let mut order: Vec<usize> = (1..=k).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut rank = vec![0; k + 1];
        for (i, &x) in order.iter().enumerate() {
            rank[x] = i + 1;
        }
        Self { rank }
    }

    pub fn rank_of(&self, item: usize) -> Option<usize> {
        self.rank.get(item).copied().filter(|&r| r > 0)
    }

    pub fn evaluate(&self, test: &Corpus, cutoffs: &[usize]) -> Metrics {
        let ranks: Vec<Option<usize>> = eval_pairs(test)
            .iter()
            .map(|&(_, target)| self.rank_of(target))
            .collect();
        Metrics::from_ranks(&ranks, cutoffs)
    }
}
