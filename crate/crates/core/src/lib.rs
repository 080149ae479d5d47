//! Déjà vu memorization audits for two-tower (caption/image) embedding models.
//!
//! A target model trained on split A and a reference model trained on a
//! disjoint split B both embed A's captions. For each caption the `k`
//! nearest public images are retrieved under each model, and the objects
//! annotated on those neighbors are scored against the objects actually
//! present in the training image. Objects the target recovers beyond what
//! the reference recovers were memorized from the training pair.
//!
//! Modules:
//! - [`embedding_store`]: embedding/annotation files and the aligned dataset
//! - [`knn`]: exact top-k cosine retrieval
//! - [`metrics`]: per-record scores, population gaps, bootstrap, gap curves
//! - [`audit`]: the full test over a split, producing reports
//! - [`dedup`]: caption and semantic dedup, disjoint splits
//! - [`toy`]: synthetic corpus and contrastive trainer for validation

pub mod audit;
pub mod dedup;
pub mod embedding_store;
pub mod error;
pub mod knn;
pub mod metrics;
pub mod toy;
pub mod vector;

pub use audit::{run_audit, run_sample_audit, AuditConfig, ObjectRule, PairedMetrics, PopulationReport};
pub use embedding_store::{assemble, AnnotationTable, AuditDataset, EmbeddingMatrix, ObjectLabelSet};
pub use error::{Error, Result};
pub use knn::{batch_top_k, min_distance, top_k, NeighborSet};
pub use metrics::{GapCurve, GapMetric, SampleMetrics, SortKey};
