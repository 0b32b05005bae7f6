//! Retrieval-based hierarchical classification.
//!
//! A [`FeatureBank`] stores L2-normalized embeddings labeled with a full path
//! through a three-level [`Taxonomy`]. Queries are classified by exact cosine
//! kNN with coarse-to-fine voting ([`hier`]), several banks can be combined by
//! majority vote ([`ensemble`]), and [`metrics`] scores the result with macro
//! F1. [`toy_train`] holds the teacher/student losses on linear heads, checked
//! against finite differences by [`gradcheck`].

pub mod ablation;
pub mod bank;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod hier;
pub mod knn;
pub mod metrics;
pub mod records;
pub mod synth;
pub mod taxonomy;
pub mod toy_train;

pub use bank::{l2_normalize, BankEntry, Embedding, FeatureBank};
pub use error::{Error, Result};
pub use hier::{predict_flat, predict_hierarchical, vote_mode, HierPrediction};
pub use knn::{cosine_similarity, top_k, top_k_filtered, LabelFilter, NeighborSet};
pub use taxonomy::{LabelPath, Taxonomy};
