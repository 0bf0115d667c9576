//! Multi-source concept-drift analytics.
//!
//! The crate turns timestamped multi-source records into per-source drift
//! levels, cross-source consistency verdicts, projected model-parameter
//! trajectories and on-demand concept explanations.
//!
//! Modules follow the processing order:
//!
//! - [`data`]: CSV ingest, unit-time batching, normalization
//! - [`learner`]: online logistic ensemble per source
//! - [`drift_index`]: error-rate drift levels, warnings and confirmations
//! - [`consistency`]: naive Bayes consistency judgement across sources
//! - [`projection`]: shared PCA plane for parameter snapshots
//! - [`concept`]: correlation ranking, binned matrix, concept store
//! - [`pipeline`]: end-to-end offline run producing an [`pipeline::AnalysisBundle`]

pub mod concept;
pub mod consistency;
pub mod data;
pub mod drift_index;
pub mod error;
pub mod export;
pub mod learner;
pub mod pipeline;
pub mod projection;
pub mod synth;

pub use error::{ConceptError, ConsistencyError, DataError, LearnerError, ProjectionError};
