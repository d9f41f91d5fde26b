//! Error types shared across pipeline stages.

use thiserror::Error;

use crate::gateway::GatewayError;

/// Failure of a single pipeline stage for a single post.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),

    /// Model output could not be parsed even after the repair retry.
    #[error("parse failure at {stage}: {detail}")]
    ParseFailure { stage: &'static str, detail: String },

    /// Every query against a search provider failed.
    #[error("search provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("fetch failed for {url}: {reason}")]
    FetchFailure { url: String, reason: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("post failed validation: {0}")]
    InvalidPost(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn parse(stage: &'static str, detail: impl Into<String>) -> Self {
        PipelineError::ParseFailure { stage, detail: detail.into() }
    }

    /// Short machine-readable stage tag for failure records.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Gateway(_) => "gateway",
            PipelineError::ParseFailure { stage, .. } => stage,
            PipelineError::ProviderUnavailable(_) => "search",
            PipelineError::FetchFailure { .. } => "fetch",
            PipelineError::Template(_) => "template",
            PipelineError::Config(_) => "config",
            PipelineError::InvalidPost(_) => "validation",
            PipelineError::Image(_) => "image",
            PipelineError::Io(_) => "io",
        }
    }
}
