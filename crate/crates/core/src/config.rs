//! Run configuration: `[section]` headers and `key = value` lines.
//!
//! ```text
//! [data]
//! path = train.txt
//! seq_len = 20
//!
//! [partition]
//! clusters = 3
//! ranks = 64,16,4
//!
//! [backbone]
//! width = 64
//! dilations = 1,2,4,8,1,2,4,8
//! scheme = adjacent-block
//! ```
//!
//! `#` starts a comment. Unknown sections or keys are rejected with their line.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::backbone::SharingScheme;
use crate::model::ModelConfig;
use crate::partition::{partition_items_with_ratio, rank_schedule, DEFAULT_HEAD_RATIO};
use crate::trainer::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key '{key}' in section [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: bad value for '{key}': {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("missing required key '{0}'")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Item count; required when there is no data file to derive it from.
    pub items: Option<usize>,
    pub seq_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSection {
    pub clusters: usize,
    pub head_ratio: f64,
    /// Explicit ranks; defaults to halving the width per cluster.
    pub ranks: Option<Vec<usize>>,
    /// Explicit cluster sizes; defaults to the recursive head-ratio split.
    pub sizes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSection {
    pub width: usize,
    pub kernel_width: usize,
    pub dilations: Vec<usize>,
    pub scheme: SharingScheme,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub topn: Vec<usize>,
    pub train_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSection,
    pub partition: PartitionSection,
    pub backbone: BackboneSection,
    pub training: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSection {
                path: None,
                items: None,
                seq_len: 20,
            },
            partition: PartitionSection {
                clusters: 1,
                head_ratio: DEFAULT_HEAD_RATIO,
                ranks: None,
                sizes: None,
            },
            backbone: BackboneSection {
                width: 64,
                kernel_width: 3,
                dilations: vec![1, 2, 4, 8, 1, 2, 4, 8],
                scheme: SharingScheme::None,
            },
            training: TrainConfig::default(),
            eval: EvalSection {
                topn: vec![5, 20],
                train_ratio: 0.8,
            },
        }
    }
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("'{}' is not valid", p.trim())))
        .collect()
}

fn scalar<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("'{v}' is not valid"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    message: format!("unterminated section header '{content}'"),
                })?;
                let name = name.trim();
                if !["data", "partition", "backbone", "training", "eval"].contains(&name) {
                    return Err(ConfigError::Syntax {
                        line,
                        message: format!("unknown section [{name}]"),
                    });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("key '{key}' outside any section"),
                });
            }
            if !seen.insert((section.clone(), key.to_string())) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("duplicate key '{key}'"),
                });
            }
            cfg.set(&section, key, value).map_err(|e| match e {
                None => ConfigError::UnknownKey {
                    line,
                    section: section.clone(),
                    key: key.to_string(),
                },
                Some(message) => ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    message,
                },
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `Err(None)` for an unknown key, `Err(Some(msg))` for a bad value.
    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), Option<String>> {
        let t = &mut self.training;
        match (section, key) {
            ("data", "path") => self.data.path = Some(PathBuf::from(v)),
            ("data", "items") => self.data.items = Some(scalar(v)?),
            ("data", "seq_len") => self.data.seq_len = scalar(v)?,
            ("partition", "clusters") => self.partition.clusters = scalar(v)?,
            ("partition", "head_ratio") => self.partition.head_ratio = scalar(v)?,
            ("partition", "ranks") => self.partition.ranks = Some(list(v)?),
            ("partition", "sizes") => self.partition.sizes = Some(list(v)?),
            ("backbone", "width") => self.backbone.width = scalar(v)?,
            ("backbone", "kernel_width") => self.backbone.kernel_width = scalar(v)?,
            ("backbone", "dilations") => self.backbone.dilations = list(v)?,
            ("backbone", "scheme") => self.backbone.scheme = v.parse().map_err(Some)?,
            ("training", "batch_size") => t.batch_size = scalar(v)?,
            ("training", "learning_rate") => t.learning_rate = scalar(v)?,
            ("training", "max_epochs") => t.max_epochs = scalar(v)?,
            ("training", "max_steps") => t.max_steps = Some(scalar(v)?),
            ("training", "seed") => t.seed = scalar(v)?,
            ("training", "convergence_tol") => t.convergence_tol = scalar(v)?,
            ("training", "convergence_window") => t.convergence_window = scalar(v)?,
            ("eval", "topn") => self.eval.topn = list(v)?,
            ("eval", "train_ratio") => self.eval.train_ratio = scalar(v)?,
            _ => return Err(None),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let positive = [
            ("data.seq_len", self.data.seq_len),
            ("partition.clusters", self.partition.clusters),
            ("backbone.width", self.backbone.width),
            ("backbone.kernel_width", self.backbone.kernel_width),
            ("training.batch_size", self.training.batch_size),
            ("training.max_epochs", self.training.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.data.seq_len < 2 {
            return bad("data.seq_len must be at least 2".into());
        }
        if !(self.training.learning_rate > 0.0) {
            return bad("training.learning_rate must be positive".into());
        }
        if self.eval.topn.is_empty() || self.eval.topn.contains(&0) {
            return bad("eval.topn must list positive cutoffs".into());
        }
        if !(self.eval.train_ratio > 0.0 && self.eval.train_ratio < 1.0) {
            return bad("eval.train_ratio must lie in (0, 1)".into());
        }
        if let Some(items) = self.data.items {
            if let Some(&n) = self.eval.topn.iter().max() {
                if n > items {
                    return bad(format!("eval.topn {n} exceeds data.items {items}"));
                }
            }
        }
        Ok(())
    }

    /// Resolves cluster sizes and ranks for `items` and builds the model config.
    pub fn model_config(&self, items: usize) -> Result<ModelConfig, ConfigError> {
        if let Some(declared) = self.data.items {
            if declared != items {
                return Err(ConfigError::Invalid(format!(
                    "data.items = {declared} but the corpus has {items} items"
                )));
            }
        }
        let p = &self.partition;
        let invalid = |e: crate::partition::PartitionError| ConfigError::Invalid(e.to_string());
        let sizes = match &p.sizes {
            Some(s) => s.clone(),
            None => partition_items_with_ratio(items, p.clusters, p.head_ratio).map_err(invalid)?,
        };
        let ranks = match &p.ranks {
            Some(r) => r.clone(),
            None => rank_schedule(self.backbone.width, sizes.len()).map_err(invalid)?,
        };
        if sizes.len() != p.clusters || ranks.len() != p.clusters {
            return Err(ConfigError::Invalid(format!(
                "partition.clusters = {} but {} sizes and {} ranks given",
                p.clusters,
                sizes.len(),
                ranks.len()
            )));
        }
        let config = ModelConfig {
            items,
            width: self.backbone.width,
            cluster_sizes: sizes,
            ranks,
            kernel_width: self.backbone.kernel_width,
            dilations: self.backbone.dilations.clone(),
            scheme: self.backbone.scheme,
            seq_len: self.data.seq_len,
            seed: self.training.seed,
        };
        config
            .count_config()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    /// Fully resolved configuration in the same format `parse` reads.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::from("[data]\n");
        if let Some(p) = &self.data.path {
            let _ = writeln!(s, "path = {}", p.display());
        }
        if let Some(k) = self.data.items {
            let _ = writeln!(s, "items = {k}");
        }
        let _ = writeln!(s, "seq_len = {}\n", self.data.seq_len);
        let p = &self.partition;
        let _ = writeln!(s, "[partition]\nclusters = {}\nhead_ratio = {}", p.clusters, p.head_ratio);
        if let Some(r) = &p.ranks {
            let _ = writeln!(s, "ranks = {}", join(r));
        }
        if let Some(z) = &p.sizes {
            let _ = writeln!(s, "sizes = {}", join(z));
        }
        let b = &self.backbone;
        let _ = writeln!(
            s,
            "\n[backbone]\nwidth = {}\nkernel_width = {}\ndilations = {}\nscheme = {}",
            b.width,
            b.kernel_width,
            join(&b.dilations),
            b.scheme
        );
        let t = &self.training;
        let _ = writeln!(
            s,
            "\n[training]\nbatch_size = {}\nlearning_rate = {}\nmax_epochs = {}",
            t.batch_size, t.learning_rate, t.max_epochs
        );
        if let Some(m) = t.max_steps {
            let _ = writeln!(s, "max_steps = {m}");
        }
        let _ = writeln!(
            s,
            "seed = {}\nconvergence_tol = {}\nconvergence_window = {}",
            t.seed, t.convergence_tol, t.convergence_window
        );
        let _ = writeln!(
            s,
            "\n[eval]\ntopn = {}\ntrain_ratio = {}",
            join(&self.eval.topn),
            self.eval.train_ratio
        );
        s
    }
}
