//! Interaction sequences: frequency-sorted vocabulary, left padding, chunking,
//! train/test splitting and a seeded long-tailed synthetic generator.
//!
//! Id 0 is padding. Real items get ids `1..=K` in non-increasing frequency
//! order, ties broken by first occurrence.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus has no items")]
    Empty,
    #[error("unknown item token '{0}'")]
    UnknownToken(String),
    #[error("invalid corpus parameter: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    frequency: Vec<u64>,
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(raw: &[Vec<S>]) -> Result<Self, CorpusError> {
        let mut first_seen: Vec<String> = Vec::new();
        let mut counts: HashMap<&str, (usize, u64)> = HashMap::new();
        for seq in raw {
            for tok in seq {
                let tok = tok.as_ref();
                let entry = counts.entry(tok).or_insert_with(|| {
                    first_seen.push(tok.to_string());
                    (first_seen.len() - 1, 0)
                });
                entry.1 += 1;
            }
        }
        if first_seen.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut order: Vec<(usize, u64)> = counts.into_values().collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let tokens: Vec<String> = order.iter().map(|&(i, _)| first_seen[i].clone()).collect();
        let frequency = order.iter().map(|&(_, c)| c).collect();
        Ok(Self::from_parts(tokens, frequency))
    }

    /// Vocabulary with tokens already in id order (id `i+1` ↔ `tokens[i]`).
    pub fn from_parts(tokens: Vec<String>, frequency: Vec<u64>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 1))
            .collect();
        Self {
            tokens,
            index,
            frequency,
        }
    }

    /// Number of real items `K`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(1)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequency(&self, id: usize) -> u64 {
        id.checked_sub(1)
            .and_then(|i| self.frequency.get(i))
            .copied()
            .unwrap_or(0)
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequency
    }
}

/// Encodes one token sequence into fixed-length, left-padded chunks of `t`.
pub fn encode_pad<S: AsRef<str>>(
    sequence: &[S],
    vocab: &Vocabulary,
    t: usize,
) -> Result<Vec<Vec<usize>>, CorpusError> {
    let ids = sequence
        .iter()
        .map(|tok| {
            let tok = tok.as_ref();
            vocab
                .id(tok)
                .ok_or_else(|| CorpusError::UnknownToken(tok.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pad_chunks(&ids, t))
}

pub fn pad_chunks(ids: &[usize], t: usize) -> Vec<Vec<usize>> {
    ids.chunks(t)
        .map(|chunk| {
            let mut v = vec![0; t - chunk.len()];
            v.extend_from_slice(chunk);
            v
        })
        .collect()
}

/// Tokens of the non-padding suffix of an encoded sequence.
pub fn decode<'v>(ids: &[usize], vocab: &'v Vocabulary) -> Vec<&'v str> {
    ids.iter().filter_map(|&id| vocab.token(id)).collect()
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub sequences: Vec<Vec<usize>>,
    pub seq_len: usize,
    pub vocab: Arc<Vocabulary>,
}

impl Corpus {
    /// Builds the vocabulary from `raw` and encodes every sequence.
    pub fn from_raw<S: AsRef<str>>(raw: &[Vec<S>], seq_len: usize) -> Result<Self, CorpusError> {
        let vocab = Arc::new(Vocabulary::build(raw)?);
        Self::encode_with(raw, seq_len, vocab)
    }

    /// Encodes `raw` against an existing vocabulary.
    pub fn encode_with<S: AsRef<str>>(
        raw: &[Vec<S>],
        seq_len: usize,
        vocab: Arc<Vocabulary>,
    ) -> Result<Self, CorpusError> {
        if seq_len < 2 {
            return Err(CorpusError::Invalid(format!(
                "sequence length must be at least 2, got {seq_len}"
            )));
        }
        let mut sequences = Vec::new();
        for seq in raw.iter().filter(|s| !s.is_empty()) {
            sequences.extend(encode_pad(seq, &vocab, seq_len)?);
        }
        Ok(Self {
            sequences,
            seq_len,
            vocab,
        })
    }

    pub fn num_items(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    fn with_sequences(&self, sequences: Vec<Vec<usize>>) -> Self {
        Self {
            sequences,
            seq_len: self.seq_len,
            vocab: Arc::clone(&self.vocab),
        }
    }

    /// Random disjoint split with `round(N·ratio)` sequences in the first part.
    pub fn split_train_test(&self, ratio: f64, seed: u64) -> Result<(Self, Self), CorpusError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(CorpusError::Invalid(format!(
                "split ratio must lie in (0, 1), got {ratio}"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64 * ratio) + 0.5).floor() as usize;
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.sequences[i].clone()).collect();
        Ok((
            self.with_sequences(pick(&order[..cut])),
            self.with_sequences(pick(&order[cut..])),
        ))
    }
}

pub fn read_sequences(path: &Path) -> Result<Vec<Vec<String>>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_sequences(&text))
}

/// One sequence per line, whitespace-separated tokens; blank lines skipped.
pub fn parse_sequences(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|line| line.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|seq| !seq.is_empty())
        .collect()
}

pub fn write_sequences<S: AsRef<str>>(path: &Path, sequences: &[Vec<S>]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    for seq in sequences {
        let line: Vec<&str> = seq.iter().map(AsRef::as_ref).collect();
        writeln!(out, "{}", line.join(" ")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Successors per item in the generator's transition structure.
pub const SUCCESSORS: usize = 3;
/// Relative weights of those successors.
const SUCCESSOR_WEIGHTS: [f64; SUCCESSORS] = [0.6, 0.3, 0.1];

#[derive(Clone, Debug, PartialEq)]
pub struct ZipfConfig {
    pub items: usize,
    pub sequences: usize,
    pub seq_len: usize,
    pub exponent: f64,
    pub markov_weight: f64,
    pub seed: u64,
}

impl ZipfConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.items < 2 {
            return Err(CorpusError::Invalid("need at least 2 items".into()));
        }
        if self.seq_len < 2 {
            return Err(CorpusError::Invalid("sequence length must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.markov_weight) {
            return Err(CorpusError::Invalid(format!(
                "markov weight must lie in [0, 1), got {}",
                self.markov_weight
            )));
        }
        if !(self.exponent >= 0.0 && self.exponent.is_finite()) {
            return Err(CorpusError::Invalid(format!(
                "zipf exponent must be non-negative, got {}",
                self.exponent
            )));
        }
        Ok(())
    }
}

/// Zipf weights `r^(−s)` for ranks `1..=items`.
pub fn zipf_weights(items: usize, exponent: f64) -> Vec<f64> {
    (1..=items).map(|r| (r as f64).powf(-exponent)).collect()
}

/// Raw item sequences over ranks `1..=items`. Each next item follows a
/// seeded sparse transition of the previous one with probability
/// `markov_weight` and is otherwise an independent Zipf draw. Successors are
/// themselves Zipf draws, so item marginals stay Zipf-shaped.
pub fn generate_zipf_sequences(config: &ZipfConfig) -> Result<Vec<Vec<usize>>, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let zipf = WeightedIndex::new(zipf_weights(config.items, config.exponent))
        .map_err(|e| CorpusError::Invalid(e.to_string()))?;
    let successor_pick =
        WeightedIndex::new(SUCCESSOR_WEIGHTS).expect("successor weights are positive");
    let successors: Vec<[usize; SUCCESSORS]> = (0..config.items)
        .map(|_| std::array::from_fn(|_| zipf.sample(&mut rng)))
        .collect();
    let mut out = Vec::with_capacity(config.sequences);
    for _ in 0..config.sequences {
        let mut seq = Vec::with_capacity(config.seq_len);
        let mut prev = zipf.sample(&mut rng);
        seq.push(prev + 1);
        for _ in 1..config.seq_len {
            let next = if config.markov_weight > 0.0 && rng.gen_bool(config.markov_weight) {
                successors[prev][successor_pick.sample(&mut rng)]
            } else {
                zipf.sample(&mut rng)
            };
            seq.push(next + 1);
            prev = next;
        }
        out.push(seq);
    }
    Ok(out)
}

pub fn sequences_to_tokens(sequences: &[Vec<usize>]) -> Vec<Vec<String>> {
    sequences
        .iter()
        .map(|s| s.iter().map(|x| x.to_string()).collect())
        .collect()
}

/// Generated corpus with a vocabulary built from the sample.
pub fn generate_zipf_corpus(config: &ZipfConfig) -> Result<Corpus, CorpusError> {
    let raw = sequences_to_tokens(&generate_zipf_sequences(config)?);
    Corpus::from_raw(&raw, config.seq_len)
}

/// Least-squares slope of `ln(frequency)` against `ln(rank)` over the
/// nonzero entries of a frequency list sorted in any order.
pub fn rank_frequency_slope(frequencies: &[u64]) -> Option<f64> {
    let mut sorted: Vec<u64> = frequencies.iter().copied().filter(|&f| f > 0).collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    if sorted.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(i, &f)| (((i + 1) as f64).ln(), (f as f64).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

/// Occurrence counts of ids `1..=items` over all sequences.
pub fn item_counts(sequences: &[Vec<usize>], items: usize) -> Vec<u64> {
    let mut counts = vec![0u64; items];
    for &x in sequences.iter().flatten() {
        if x > 0 {
            counts[x - 1] += 1;
        }
    }
    counts
}
