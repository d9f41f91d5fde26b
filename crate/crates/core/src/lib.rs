//! Staged multimodal misinformation detection.
//!
//! The pipeline classifies an image–text post in up to four stages:
//!
//! 1. **Initial inference** — the model produces a first prediction and a
//!    rationale, then self-assesses whether external knowledge is needed.
//! 2. **Multimodal retrieval** — a reasoning-aware query set (one title with a
//!    `"fake news "` prefix plus two verification questions) drives parallel
//!    text search, while reverse-image lookup traces where the attached image
//!    previously appeared on the web.
//! 3. **Resource distillation** — coarse batched topic filtering of search
//!    hits, page fetching with main-content extraction, and fine-grained
//!    extraction of supporting/refuting segments into evidence triplets.
//! 4. **Refined prediction** — the post is re-presented with all gathered
//!    evidence and a six-category rubric; an `unverified` outcome falls back
//!    to the initial prediction.
//!
//! Every external interaction (model, text search, image search, page fetch)
//! goes through a pluggable provider that supports live access, deterministic
//! replay from recorded fixtures, and scripted mocks, so whole-pipeline runs
//! are reproducible byte-for-byte offline.

pub mod cache;
pub mod distillation;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod inference;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;

pub use error::PipelineError;
pub use model::{
    BinaryLabel, DirectResult, EvidenceTriplet, FinalVerdict, FineCategory, ImageRef, PostRecord,
    PromptVariant, Provenance, QueryOrigin, QuerySet, SourceDataset, VisualEvidence, WebDocument,
    map_category, validate_post,
};
