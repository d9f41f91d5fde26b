//! Live provider access over the de-facto chat-completions wire format.
//!
//! The HTTP layer sits behind [`HttpTransport`] so the retry policy and
//! payload decoding are testable with fault-injecting stubs.

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use rand::Rng;
use serde_json::json;

use super::{FinishReason, GatewayError, ModelRequest, RawOutcome};

/// Transport-level outcome of one attempt.
#[derive(Debug)]
pub enum TransportOutcome {
    /// HTTP 2xx with a JSON body.
    Success(serde_json::Value),
    /// HTTP 429 or provider-side throttle.
    RateLimited,
    /// Network failure or HTTP 5xx; retryable.
    TransportError(String),
    /// HTTP 4xx other than 429; not retryable.
    Rejected(String),
}

#[async_trait]
pub trait HttpTransport: Send + Sync {
    async fn post_json(&self, body: serde_json::Value) -> TransportOutcome;
}

/// reqwest-backed transport pointed at `<base_url>/chat/completions`.
pub struct ReqwestTransport {
    client: reqwest::Client,
    url: String,
    api_key: String,
}

impl ReqwestTransport {
    pub fn new(base_url: &str, api_key: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(ReqwestTransport {
            client,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.to_string(),
        })
    }
}

#[async_trait]
impl HttpTransport for ReqwestTransport {
    async fn post_json(&self, body: serde_json::Value) -> TransportOutcome {
        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await;
        match response {
            Err(e) => TransportOutcome::TransportError(e.to_string()),
            Ok(resp) => {
                let status = resp.status();
                if status.as_u16() == 429 {
                    return TransportOutcome::RateLimited;
                }
                if status.is_server_error() {
                    return TransportOutcome::TransportError(format!("http {status}"));
                }
                if !status.is_success() {
                    return TransportOutcome::Rejected(format!("http {status}"));
                }
                match resp.json().await {
                    Ok(value) => TransportOutcome::Success(value),
                    Err(e) => TransportOutcome::TransportError(format!("body read: {e}")),
                }
            }
        }
    }
}

/// Exponential backoff: `base * factor^attempt`, jittered ±20%, at most
/// `max_attempts` total attempts. Malformed payloads are never retried.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_delay: Duration::from_secs(1), factor: 2.0 }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * self.factor.powi(attempt as i32);
        let jitter = rand::thread_rng().gen_range(0.8..=1.2);
        Duration::from_secs_f64(nominal * jitter)
    }
}

pub struct LiveClient {
    transport: Box<dyn HttpTransport>,
    retry: RetryPolicy,
}

impl LiveClient {
    pub fn new(transport: Box<dyn HttpTransport>, retry: RetryPolicy) -> LiveClient {
        LiveClient { transport, retry }
    }

    pub async fn complete(&self, request: &ModelRequest) -> Result<RawOutcome, GatewayError> {
        let body = encode_request(request);
        let mut last_transport_error = String::new();
        for attempt in 0..self.retry.max_attempts {
            if attempt > 0 {
                tokio::time::sleep(self.retry.delay(attempt - 1)).await;
            }
            match self.transport.post_json(body.clone()).await {
                TransportOutcome::Success(payload) => {
                    // Undecodable payloads are terminal: retrying a malformed
                    // response class is forbidden.
                    let decoded = decode_payload(&payload)?;
                    return Ok(RawOutcome { decoded, raw_payload: payload });
                }
                TransportOutcome::RateLimited => {
                    tracing::warn!(attempt, "rate limited, backing off");
                    last_transport_error = "rate limited".into();
                }
                TransportOutcome::TransportError(e) => {
                    tracing::warn!(attempt, error = %e, "transport error, backing off");
                    last_transport_error = e;
                }
                TransportOutcome::Rejected(e) => {
                    return Err(GatewayError::Transport(format!("rejected: {e}")));
                }
            }
        }
        if last_transport_error == "rate limited" {
            Err(GatewayError::RateLimited { attempts: self.retry.max_attempts })
        } else {
            Err(GatewayError::Transport(format!(
                "gave up after {} attempts: {last_transport_error}",
                self.retry.max_attempts
            )))
        }
    }
}

fn encode_request(request: &ModelRequest) -> serde_json::Value {
    let mut content = vec![json!({"type": "text", "text": request.rendered_prompt})];
    if let Some(att) = &request.image_attachment {
        let b64 = base64::engine::general_purpose::STANDARD.encode(&att.data);
        content.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:{};base64,{b64}", att.media_type)}
        }));
    }
    json!({
        "model": request.model_hint,
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
        "messages": [{"role": "user", "content": content}]
    })
}

/// Decoded text and finish reason from a chat-completions payload.
pub fn decode_payload(payload: &serde_json::Value) -> Result<(String, FinishReason), GatewayError> {
    let choice = payload
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::MalformedResponse("payload has no choices".into()))?;
    let text = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .ok_or_else(|| GatewayError::MalformedResponse("choice has no message content".into()))?
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(|f| f.as_str()) {
        Some("length") => FinishReason::Truncated,
        Some("content_filter") => FinishReason::Refused,
        _ => FinishReason::Complete,
    };
    Ok((text, finish_reason))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::TemplateId;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn request() -> ModelRequest {
        ModelRequest {
            template_id: TemplateId::Direct,
            rendered_prompt: "p".into(),
            image_attachment: None,
            model_hint: "m".into(),
            max_tokens: 8,
            temperature: 0.0,
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy { max_attempts: 5, base_delay: Duration::from_millis(1), factor: 1.0 }
    }

    /// Fails `failures` times, then succeeds (or keeps failing forever).
    struct FaultTransport {
        attempts: AtomicU32,
        failures: u32,
        mode: &'static str,
    }

    #[async_trait]
    impl HttpTransport for FaultTransport {
        async fn post_json(&self, _body: serde_json::Value) -> TransportOutcome {
            let n = self.attempts.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return match self.mode {
                    "rate" => TransportOutcome::RateLimited,
                    _ => TransportOutcome::TransportError("boom".into()),
                };
            }
            TransportOutcome::Success(serde_json::json!({
                "choices": [{"message": {"content": "ok"}, "finish_reason": "stop"}]
            }))
        }
    }

    #[tokio::test]
    async fn retries_transport_errors_then_succeeds() {
        let transport =
            FaultTransport { attempts: AtomicU32::new(0), failures: 2, mode: "boom" };
        let client = LiveClient::new(Box::new(transport), fast_retry());
        let out = client.complete(&request()).await.unwrap();
        assert_eq!(out.decoded.0, "ok");
    }

    #[tokio::test]
    async fn rate_limit_storm_exhausts_budget_with_bounded_attempts() {
        struct CountingTransport(std::sync::Arc<AtomicU32>);
        #[async_trait]
        impl HttpTransport for CountingTransport {
            async fn post_json(&self, _body: serde_json::Value) -> TransportOutcome {
                self.0.fetch_add(1, Ordering::SeqCst);
                TransportOutcome::RateLimited
            }
        }
        let counter = std::sync::Arc::new(AtomicU32::new(0));
        let client = LiveClient::new(Box::new(CountingTransport(counter.clone())), fast_retry());
        let err = client.complete(&request()).await.unwrap_err();
        assert!(matches!(err, GatewayError::RateLimited { attempts: 5 }));
        assert_eq!(counter.load(Ordering::SeqCst), 5);
    }

    #[tokio::test]
    async fn malformed_payload_is_never_retried() {
        struct MalformedTransport(std::sync::Arc<AtomicU32>);
        #[async_trait]
        impl HttpTransport for MalformedTransport {
            async fn post_json(&self, _body: serde_json::Value) -> TransportOutcome {
                self.0.fetch_add(1, Ordering::SeqCst);
                TransportOutcome::Success(serde_json::json!({"unexpected": true}))
            }
        }
        let counter = std::sync::Arc::new(AtomicU32::new(0));
        let client = LiveClient::new(Box::new(MalformedTransport(counter.clone())), fast_retry());
        let err = client.complete(&request()).await.unwrap_err();
        assert!(matches!(err, GatewayError::MalformedResponse(_)));
        assert_eq!(counter.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn encode_embeds_image_as_data_url() {
        let mut req = request();
        req.image_attachment =
            Some(crate::gateway::ImageAttachment { data: vec![1, 2], media_type: "image/png".into() });
        let body = encode_request(&req);
        let content = &body["messages"][0]["content"];
        assert_eq!(content[0]["type"], "text");
        assert!(content[1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
    }
}
