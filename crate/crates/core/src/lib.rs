//! Rewriting original inputs before they reach a task model.
//!
//! The crate covers the whole loop: build rewrite training data by
//! back-translation, gate rewrites by word-level similarity to the original,
//! run rewrite-then-generate inference through pluggable backends, and
//! evaluate origin against rewrite with BLEU, edit rate and ROUGE-L.

pub mod dataset;
pub mod digest;
pub mod filtering;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod text;

pub use dataset::{ParallelRecord, RewriteRecord};
pub use filtering::{FilterConfig, FilterDecision, FilterStats};
pub use gateway::{BackendSpec, Gateway, GenerationParams, GenerationRequest, PromptTemplate};
pub use metrics::{MetricKind, SimilarityScore};
pub use pipeline::{EvalReport, RunConfig};
pub use text::{NormalizationPolicy, TokenSeq};
