//! The single choke point for all model calls.
//!
//! Every stage builds a [`ModelRequest`] and hands it to [`Gateway::complete`].
//! The gateway runs in exactly one provider mode — live wire access,
//! deterministic replay from recorded fixtures, or scripted mocks — and can
//! record responses into a content-addressed fixture store for later replay.

mod digest;
mod fixtures;
mod live;
mod scripted;

pub use digest::canonical_digest;
pub use fixtures::{store_is_complete, Fixture, FixtureRecorder, FixtureStore};
pub use live::{
    decode_payload, HttpTransport, LiveClient, ReqwestTransport, RetryPolicy, TransportOutcome,
};
pub use scripted::{ScriptRule, ScriptedModel};

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::TemplateId;

/// Image bytes plus their media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAttachment {
    pub data: Vec<u8>,
    pub media_type: String,
}

/// One model call: a rendered prompt, an optional image, and decoding knobs.
#[derive(Debug, Clone)]
pub struct ModelRequest {
    pub template_id: TemplateId,
    pub rendered_prompt: String,
    pub image_attachment: Option<ImageAttachment>,
    /// Deployment or model name; opaque to the pipeline.
    pub model_hint: String,
    pub max_tokens: u32,
    /// Sampling temperature in [0, 2]. Defaults to 0 everywhere so replay
    /// fidelity is maximal.
    pub temperature: f32,
}

impl ModelRequest {
    pub fn digest(&self) -> String {
        canonical_digest(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    Truncated,
    Refused,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub provider_latency_ms: u64,
    /// Canonical digest of the originating request.
    pub request_digest: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited, retry budget of {attempts} attempts exhausted")]
    RateLimited { attempts: u32 },
    #[error("no fixture for digest {digest}: {detail}")]
    FixtureMissing { digest: String, detail: String },
    #[error("provider returned an undecodable payload: {0}")]
    MalformedResponse(String),
    #[error("fixture store: {0}")]
    Store(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

/// Raw provider result before it becomes a [`ModelResponse`].
#[derive(Debug)]
pub struct RawOutcome {
    pub decoded: (String, FinishReason),
    pub raw_payload: serde_json::Value,
}

enum Mode {
    Live(LiveClient),
    Replay(FixtureStore),
    Scripted(ScriptedModel),
}

/// Gateway with exactly one provider mode, an optional recorder, a live-call
/// concurrency cap, and a call counter.
pub struct Gateway {
    mode: Mode,
    recorder: Option<FixtureRecorder>,
    semaphore: tokio::sync::Semaphore,
    calls: AtomicU64,
}

impl Gateway {
    pub fn replay(fixture_dir: &Path) -> Result<Gateway, GatewayError> {
        Ok(Gateway::with_mode(Mode::Replay(FixtureStore::load(fixture_dir)?), 16))
    }

    pub fn scripted(model: ScriptedModel) -> Gateway {
        Gateway::with_mode(Mode::Scripted(model), 16)
    }

    pub fn live(client: LiveClient, max_in_flight: usize) -> Gateway {
        Gateway::with_mode(Mode::Live(client), max_in_flight)
    }

    fn with_mode(mode: Mode, max_in_flight: usize) -> Gateway {
        Gateway { mode, recorder: None, semaphore: tokio::sync::Semaphore::new(max_in_flight), calls: AtomicU64::new(0) }
    }

    /// Enable record mode: every completed call is written to the store.
    pub fn with_recorder(mut self, recorder: FixtureRecorder) -> Gateway {
        self.recorder = Some(recorder);
        self
    }

    pub fn recorder(&self) -> Option<&FixtureRecorder> {
        self.recorder.as_ref()
    }

    /// Total completed calls since construction.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub async fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let digest = request.digest();
        let response = match &self.mode {
            Mode::Replay(store) => {
                let fixture = store.get(&digest).ok_or_else(|| GatewayError::FixtureMissing {
                    digest: digest.clone(),
                    detail: format!("template {} has no recording", request.template_id),
                })?;
                fixture.to_response()
            }
            Mode::Scripted(model) => {
                let response = model.respond(request, &digest)?;
                self.maybe_record(request, &response, None)?;
                response
            }
            Mode::Live(client) => {
                let _permit =
                    self.semaphore.acquire().await.expect("gateway semaphore closed");
                let started = std::time::Instant::now();
                let outcome = client.complete(request).await?;
                let response = ModelResponse {
                    text: outcome.decoded.0,
                    finish_reason: outcome.decoded.1,
                    provider_latency_ms: started.elapsed().as_millis() as u64,
                    request_digest: digest.clone(),
                };
                self.maybe_record(request, &response, Some(outcome.raw_payload))?;
                response
            }
        };
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(response)
    }

    fn maybe_record(
        &self,
        request: &ModelRequest,
        response: &ModelResponse,
        raw_payload: Option<serde_json::Value>,
    ) -> Result<(), GatewayError> {
        if let Some(recorder) = &self.recorder {
            recorder.record(&Fixture {
                digest: response.request_digest.clone(),
                template_id: request.template_id.as_str().to_string(),
                text: response.text.clone(),
                finish_reason: response.finish_reason,
                provider_latency_ms: response.provider_latency_ms,
                raw_provider_payload: raw_payload,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str) -> ModelRequest {
        ModelRequest {
            template_id: TemplateId::Direct,
            rendered_prompt: prompt.into(),
            image_attachment: None,
            model_hint: "m".into(),
            max_tokens: 8,
            temperature: 0.0,
        }
    }

    #[tokio::test]
    async fn replay_returns_recorded_text_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let req = request("hello");
        {
            let gw = Gateway::scripted(ScriptedModel::always("…verdict: misinformation…"))
                .with_recorder(FixtureRecorder::open(dir.path()).unwrap());
            gw.complete(&req).await.unwrap();
            gw.recorder().unwrap().mark_complete().unwrap();
        }
        let gw = Gateway::replay(dir.path()).unwrap();
        let resp = gw.complete(&req).await.unwrap();
        assert_eq!(resp.text, "…verdict: misinformation…");
        assert_eq!(resp.request_digest, req.digest());
    }

    #[tokio::test]
    async fn replay_unknown_digest_is_fixture_missing() {
        let dir = tempfile::tempdir().unwrap();
        FixtureRecorder::open(dir.path()).unwrap().mark_complete().unwrap();
        let gw = Gateway::replay(dir.path()).unwrap();
        let err = gw.complete(&request("never recorded")).await.unwrap_err();
        assert!(matches!(err, GatewayError::FixtureMissing { .. }));
    }

    #[tokio::test]
    async fn call_counter_advances() {
        let gw = Gateway::scripted(ScriptedModel::always("x"));
        gw.complete(&request("a")).await.unwrap();
        gw.complete(&request("b")).await.unwrap();
        assert_eq!(gw.call_count(), 2);
    }
}
