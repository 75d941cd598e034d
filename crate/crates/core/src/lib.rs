//! Compressed sequential recommendation.
//!
//! A CpRec model embeds item ids with a frequency-partitioned, low-rank
//! [`embedding::BlockEmbedding`], encodes the sequence with a dilated causal
//! convolution [`backbone::Backbone`] whose layers may share parameters, and
//! scores the next item with a two-level [`softmax::TreeSoftmax`].

pub mod backbone;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod model;
pub mod numerics;
pub mod partition;
pub mod softmax;
pub mod trainer;

pub use backbone::SharingScheme;
pub use model::{CpRec, ModelConfig, ModelError};
