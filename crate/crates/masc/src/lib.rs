//! Hierarchical semantic clustering over vector-quantization codebooks.
//!
//! The centerpiece is a bottom-up average-linkage (UPGMA) tree built over the
//! codebook embeddings with incremental weighted-average distance updates.
//! Cutting the tree at `k` branches yields a fine-to-coarse token mapping that
//! shrinks the prediction vocabulary of a downstream autoregressive model.
//! k-means/k-means++ baselines, entropy analytics, and brute-force reference
//! implementations round out the toolkit.

pub mod baselines;
pub mod codebook;
pub mod error;
pub mod linkage;
pub mod mapping;
pub mod metrics;
pub mod oracle;
pub mod sequence;
pub mod tree;

pub use codebook::{Codebook, FeatureVector};
pub use error::{Error, Result};
pub use linkage::{CondensedMatrix, LinkageKind};
pub use mapping::ClusterMapping;
pub use sequence::TokenSequence;
pub use tree::{MergeRecord, MergeTrace};
