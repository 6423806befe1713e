//! Streaming item indexing over a dynamic, hierarchical codebook.
//!
//! Items arrive as embeddings in tag-homogeneous batches. Each step matches
//! them against the fine codebook under a cosine gate, folds matches into the
//! clusters with an exponential moving average, grows new clusters from the
//! unmatched remainder by union-find, and resets clusters whose occupancy
//! decays. A coarse layer is built offline by size-penalised agglomerative
//! merging with silhouette pruning.

pub mod assignment;
pub mod baseline;
pub mod batcher;
pub mod config;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod indexer;
pub mod io;
pub mod occupancy;
pub mod pipeline;
pub mod similarity;
pub mod types;
pub mod union_find;

pub use assignment::{AssignVia, Assignment, AssignmentIndex};
pub use config::IndexConfig;
pub use error::{Error, Result};
pub use indexer::{Indexer, StepOutcome, StepReport};
pub use types::{ClusterSlot, CoarseCodebook, CoarsePrototype, FineCodebook, ItemRecord, SlotState, Snapshot};
