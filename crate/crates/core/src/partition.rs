//! Frequency-ordered clustering of the item set, rank schedules, and exact
//! parameter-count calculators for the input, output and middle layers.

use std::fmt;

use thiserror::Error;

use crate::backbone::SharingScheme;

/// Fraction of the remaining items assigned to each head cluster.
pub const DEFAULT_HEAD_RATIO: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("cannot split {items} items into {clusters} clusters")]
    TooFewItems { items: usize, clusters: usize },
    #[error("cluster count must be at least 1")]
    NoClusters,
    #[error("head ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("rank schedule for d={d} reaches 0 at cluster {cluster}; use fewer clusters")]
    RankUnderflow { d: usize, cluster: usize },
    #[error("invalid ranks {ranks:?}: {reason}")]
    BadRanks { ranks: Vec<usize>, reason: String },
    #[error("invalid cluster sizes {0:?}: every cluster needs at least one item")]
    BadSizes(Vec<usize>),
    #[error("middle-layer count needs an even number of layers, got {0}")]
    OddLayers(usize),
    #[error("adjacent-block sharing needs an even number of residual blocks, got {0}")]
    OddBlocks(usize),
}

/// Contiguous clusters of frequency-sorted ids `1..=K` with one rank each.
/// `ranks[0]` is the model width `d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    ranks: Vec<usize>,
}

impl Partition {
    pub fn new(sizes: Vec<usize>, ranks: Vec<usize>) -> Result<Self, PartitionError> {
        if sizes.is_empty() {
            return Err(PartitionError::NoClusters);
        }
        if sizes.contains(&0) {
            return Err(PartitionError::BadSizes(sizes));
        }
        validate_ranks(&ranks, sizes.len())?;
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &k in &sizes {
            offsets.push(offsets.last().unwrap() + k);
        }
        Ok(Self {
            sizes,
            offsets,
            ranks,
        })
    }

    /// Single cluster holding every item at full width.
    pub fn vanilla(items: usize, d: usize) -> Result<Self, PartitionError> {
        Self::new(vec![items], vec![d])
    }

    /// Head/tail split with `head_ratio` and the halving rank schedule.
    pub fn standard(items: usize, clusters: usize, d: usize) -> Result<Self, PartitionError> {
        let sizes = partition_items(items, clusters)?;
        let ranks = rank_schedule(d, clusters)?;
        Self::new(sizes, ranks)
    }

    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn width(&self) -> usize {
        self.ranks[0]
    }

    pub fn num_items(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Number of items in clusters before `cluster` (0-based).
    pub fn offset(&self, cluster: usize) -> usize {
        self.offsets[cluster]
    }

    /// 0-based `(cluster, index within cluster)` of item `x ∈ [1, K]`.
    pub fn cluster_of(&self, x: usize) -> Option<(usize, usize)> {
        if x == 0 || x > self.num_items() {
            return None;
        }
        // offsets is sorted; find the last offset < x
        let j = self.offsets.partition_point(|&o| o < x) - 1;
        Some((j, x - 1 - self.offsets[j]))
    }
}

fn validate_ranks(ranks: &[usize], clusters: usize) -> Result<(), PartitionError> {
    let bad = |reason: &str| PartitionError::BadRanks {
        ranks: ranks.to_vec(),
        reason: reason.to_string(),
    };
    if ranks.len() != clusters {
        return Err(bad("need one rank per cluster"));
    }
    if ranks.contains(&0) {
        return Err(bad("ranks must be positive"));
    }
    if ranks.windows(2).any(|w| w[1] >= w[0]) {
        return Err(bad("ranks must be strictly decreasing"));
    }
    Ok(())
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Recursive 20/80 split of `items` frequency-sorted ids into `clusters`.
pub fn partition_items(items: usize, clusters: usize) -> Result<Vec<usize>, PartitionError> {
    partition_items_with_ratio(items, clusters, DEFAULT_HEAD_RATIO)
}

/// Recursive head/tail split: each cluster but the last takes
/// `round(ratio · remaining)` items, clamped so every cluster keeps at least
/// one item; the last cluster takes the remainder.
pub fn partition_items_with_ratio(
    items: usize,
    clusters: usize,
    ratio: f64,
) -> Result<Vec<usize>, PartitionError> {
    if clusters == 0 {
        return Err(PartitionError::NoClusters);
    }
    if items < clusters {
        return Err(PartitionError::TooFewItems { items, clusters });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PartitionError::BadRatio(ratio));
    }
    let mut sizes = Vec::with_capacity(clusters);
    let mut remaining = items;
    for j in 0..clusters - 1 {
        let after = clusters - 1 - j;
        let k = round_half_up(ratio * remaining as f64).clamp(1, remaining - after);
        sizes.push(k);
        remaining -= k;
    }
    sizes.push(remaining);
    Ok(sizes)
}

/// Geometric schedule `d, d/2, d/4, …` of length `clusters`.
pub fn rank_schedule(d: usize, clusters: usize) -> Result<Vec<usize>, PartitionError> {
    if clusters == 0 {
        return Err(PartitionError::NoClusters);
    }
    let ranks: Vec<usize> = (0..clusters)
        .map(|j| d.checked_shr(j as u32).unwrap_or(0))
        .collect();
    if let Some(j) = ranks.iter().position(|&r| r == 0) {
        return Err(PartitionError::RankUnderflow { d, cluster: j + 1 });
    }
    Ok(ranks)
}

fn tail_elements(partition: &Partition) -> u64 {
    let d = partition.width() as u64;
    partition
        .sizes()
        .iter()
        .zip(partition.ranks())
        .skip(1)
        .map(|(&k, &r)| (k as u64 + d) * r as u64)
        .sum()
}

/// `k₁·d + Σ_{j≥2} (k_j + d)·d_j`.
pub fn count_input_params(partition: &Partition) -> u64 {
    partition.sizes()[0] as u64 * partition.width() as u64 + tail_elements(partition)
}

/// `(k₁ + n − 1)·d + Σ_{j≥2} (k_j + d)·d_j`.
pub fn count_output_params(partition: &Partition) -> u64 {
    let head_cols = (partition.sizes()[0] + partition.num_clusters() - 1) as u64;
    head_cols * partition.width() as u64 + tail_elements(partition)
}

/// Elements of one layer unit: kernel `w·d²`, conv bias `d`, norm gain and bias `2d`.
pub fn layer_unit_params(d: usize, kernel_width: usize) -> u64 {
    let d = d as u64;
    kernel_width as u64 * d * d + d + 2 * d
}

/// Number of distinct layer units a scheme keeps for `layers` layers.
pub fn distinct_units(layers: usize, scheme: SharingScheme) -> Result<usize, PartitionError> {
    if !layers.is_multiple_of(2) {
        return Err(PartitionError::OddLayers(layers));
    }
    let blocks = layers / 2;
    Ok(match scheme {
        SharingScheme::None => layers,
        SharingScheme::CrossLayer => 1.min(layers),
        SharingScheme::CrossBlock => 2.min(layers),
        SharingScheme::AdjacentLayer => blocks,
        SharingScheme::AdjacentBlock => {
            if !blocks.is_multiple_of(2) {
                return Err(PartitionError::OddBlocks(blocks));
            }
            blocks
        }
    })
}

pub fn count_middle_params(
    d: usize,
    kernel_width: usize,
    layers: usize,
    scheme: SharingScheme,
) -> Result<u64, PartitionError> {
    Ok(distinct_units(layers, scheme)? as u64 * layer_unit_params(d, kernel_width))
}

/// Shape of a model as far as parameter accounting is concerned.
#[derive(Clone, Debug, PartialEq)]
pub struct CountConfig {
    pub partition: Partition,
    pub kernel_width: usize,
    pub layers: usize,
    pub scheme: SharingScheme,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionReport {
    pub items: usize,
    pub width: usize,
    pub clusters: usize,
    pub layers: usize,
    pub scheme: SharingScheme,
    pub input: u64,
    pub output: u64,
    pub middle: u64,
    pub total: u64,
    pub vanilla_input: u64,
    pub vanilla_output: u64,
    pub vanilla_middle: u64,
    pub vanilla_total: u64,
}

impl CompressionReport {
    /// Compressed total over vanilla total.
    pub fn ratio(&self) -> f64 {
        self.total as f64 / self.vanilla_total as f64
    }

    /// Line-oriented `key=value` document of exact counts.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("items", self.items.to_string());
        put("width", self.width.to_string());
        put("clusters", self.clusters.to_string());
        put("layers", self.layers.to_string());
        put("scheme", self.scheme.to_string());
        put("input", self.input.to_string());
        put("output", self.output.to_string());
        put("middle", self.middle.to_string());
        put("total", self.total.to_string());
        put("vanilla_input", self.vanilla_input.to_string());
        put("vanilla_output", self.vanilla_output.to_string());
        put("vanilla_middle", self.vanilla_middle.to_string());
        put("vanilla_total", self.vanilla_total.to_string());
        put("ratio", format!("{:.6}", self.ratio()));
        out
    }
}

fn millions(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

impl fmt::Display for CompressionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "K={} d={} clusters={} layers={} scheme={}",
            self.items, self.width, self.clusters, self.layers, self.scheme
        )?;
        writeln!(f, "{:<8} {:>14} {:>10} {:>14} {:>10}", "", "compressed", "", "vanilla", "")?;
        for (name, c, v) in [
            ("input", self.input, self.vanilla_input),
            ("output", self.output, self.vanilla_output),
            ("middle", self.middle, self.vanilla_middle),
            ("total", self.total, self.vanilla_total),
        ] {
            writeln!(
                f,
                "{:<8} {:>14} {:>10} {:>14} {:>10}",
                name,
                c,
                millions(c),
                v,
                millions(v)
            )?;
        }
        write!(f, "compression ratio {:.4} ({:.2}x smaller)", self.ratio(), 1.0 / self.ratio())
    }
}

pub fn compression_report(config: &CountConfig) -> Result<CompressionReport, PartitionError> {
    let p = &config.partition;
    let items = p.num_items();
    let d = p.width();
    let vanilla = Partition::vanilla(items, d)?;
    let input = count_input_params(p);
    let output = count_output_params(p);
    let middle = count_middle_params(d, config.kernel_width, config.layers, config.scheme)?;
    let vanilla_input = count_input_params(&vanilla);
    let vanilla_output = count_output_params(&vanilla);
    let vanilla_middle =
        count_middle_params(d, config.kernel_width, config.layers, SharingScheme::None)?;
    Ok(CompressionReport {
        items,
        width: d,
        clusters: p.num_clusters(),
        layers: config.layers,
        scheme: config.scheme,
        input,
        output,
        middle,
        total: input + output + middle,
        vanilla_input,
        vanilla_output,
        vanilla_middle,
        vanilla_total: vanilla_input + vanilla_output + vanilla_middle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> Partition {
        Partition::new(vec![2, 8], vec![4, 2]).unwrap()
    }

    #[test]
    fn twenty_eighty_split() {
        assert_eq!(partition_items(100, 2).unwrap(), vec![20, 80]);
        assert_eq!(partition_items(100, 3).unwrap(), vec![20, 16, 64]);
        assert_eq!(partition_items(7, 1).unwrap(), vec![7]);
        assert_eq!(
            partition_items(2, 3).unwrap_err(),
            PartitionError::TooFewItems { items: 2, clusters: 3 }
        );
    }

    #[test]
    fn small_splits_are_clamped() {
        assert_eq!(partition_items(3, 3).unwrap(), vec![1, 1, 1]);
        assert_eq!(partition_items(4, 2).unwrap(), vec![1, 3]);
    }

    #[test]
    fn geometric_ranks() {
        assert_eq!(rank_schedule(512, 3).unwrap(), vec![512, 256, 128]);
        assert_eq!(rank_schedule(64, 1).unwrap(), vec![64]);
        assert_eq!(rank_schedule(8, 4).unwrap(), vec![8, 4, 2, 1]);
        assert!(matches!(
            rank_schedule(4, 4),
            Err(PartitionError::RankUnderflow { .. })
        ));
    }

    #[test]
    fn rejects_non_decreasing_ranks() {
        assert!(Partition::new(vec![2, 8], vec![4, 4]).is_err());
        assert!(Partition::new(vec![2, 8], vec![4]).is_err());
        assert!(Partition::new(vec![0, 8], vec![4, 2]).is_err());
    }

    #[test]
    fn locate_boundaries() {
        let p = fixture();
        assert_eq!(p.cluster_of(1), Some((0, 0)));
        assert_eq!(p.cluster_of(2), Some((0, 1)));
        assert_eq!(p.cluster_of(3), Some((1, 0)));
        assert_eq!(p.cluster_of(10), Some((1, 7)));
        assert_eq!(p.cluster_of(0), None);
        assert_eq!(p.cluster_of(11), None);
    }

    #[test]
    fn fixture_counts() {
        let p = fixture();
        assert_eq!(count_input_params(&p), 32);
        assert_eq!(count_output_params(&p), 36);
        let v = Partition::vanilla(10, 4).unwrap();
        assert_eq!(count_input_params(&v), 40);
        assert_eq!(count_output_params(&v), 40);
    }

    #[test]
    fn fixture_report_total() {
        let report = compression_report(&CountConfig {
            partition: fixture(),
            kernel_width: 3,
            layers: 4,
            scheme: SharingScheme::AdjacentBlock,
        })
        .unwrap();
        assert_eq!(report.middle, 2 * (3 * 16 + 4 + 8));
        assert_eq!(report.total, 188);
        assert!(report.to_kv().contains("total=188\n"));
    }

    #[test]
    fn middle_counts_and_errors() {
        let unit = layer_unit_params(512, 3);
        assert_eq!(unit, 3 * 512 * 512 + 512 + 1024);
        let none = count_middle_params(512, 3, 8, SharingScheme::None).unwrap();
        assert_eq!(none, 8 * unit);
        assert_eq!(
            count_middle_params(512, 3, 8, SharingScheme::CrossLayer).unwrap(),
            unit
        );
        assert_eq!(
            count_middle_params(512, 3, 7, SharingScheme::None),
            Err(PartitionError::OddLayers(7))
        );
        assert_eq!(
            count_middle_params(8, 3, 6, SharingScheme::AdjacentBlock),
            Err(PartitionError::OddBlocks(3))
        );
    }

    #[test]
    fn scheme_ratio_law() {
        for layers in [4usize, 8, 16, 32] {
            let b = (layers / 2) as u64;
            let c = |s| count_middle_params(16, 3, layers, s).unwrap();
            let cl = c(SharingScheme::CrossLayer);
            assert_eq!(c(SharingScheme::None), 2 * b * cl);
            assert_eq!(c(SharingScheme::CrossBlock), 2 * cl);
            assert_eq!(c(SharingScheme::AdjacentLayer), b * cl);
            assert_eq!(c(SharingScheme::AdjacentBlock), b * cl);
        }
    }

    proptest! {
        #[test]
        fn split_covers_all_items(items in 1usize..5000, clusters in 1usize..8) {
            prop_assume!(items >= clusters);
            let sizes = partition_items(items, clusters).unwrap();
            prop_assert_eq!(sizes.len(), clusters);
            prop_assert_eq!(sizes.iter().sum::<usize>(), items);
            prop_assert!(sizes.iter().all(|&k| k >= 1));
        }

        #[test]
        fn output_exceeds_input_by_parent_columns(items in 4usize..5000, clusters in 1usize..4) {
            prop_assume!(items >= clusters);
            let p = Partition::standard(items, clusters, 64).unwrap();
            prop_assert_eq!(
                count_output_params(&p) - count_input_params(&p),
                ((clusters - 1) * 64) as u64
            );
        }

        #[test]
        fn raising_a_tail_rank_increases_counts(items in 10usize..2000, bump in 1usize..8) {
            let base = Partition::new(partition_items(items, 3).unwrap(), vec![64, 16, 4]).unwrap();
            let bigger = Partition::new(base.sizes().to_vec(), vec![64, 16 + bump, 4]).unwrap();
            prop_assert!(count_input_params(&bigger) > count_input_params(&base));
            prop_assert!(count_output_params(&bigger) > count_output_params(&base));
        }
    }
}
