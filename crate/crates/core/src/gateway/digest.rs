//! Canonical request digests.
//!
//! A digest depends only on (template_id, rendered_prompt, image bytes,
//! model_hint, max_tokens, temperature), serialized as compact JSON with
//! alphabetically sorted keys and then hashed with SHA-256. Image bytes are
//! folded in via their own SHA-256 together with the media type; a missing
//! image serializes as `null`, so an absent image and a zero-byte image
//! produce different digests. Temperature is rendered as its shortest
//! round-tripping decimal string to keep the encoding platform-stable.

use sha2::{Digest, Sha256};

use super::ModelRequest;

pub fn canonical_digest(request: &ModelRequest) -> String {
    let mut out = String::with_capacity(request.rendered_prompt.len() + 160);
    out.push_str("{\"image\":");
    match &request.image_attachment {
        None => out.push_str("null"),
        Some(att) => {
            out.push_str("{\"media_type\":");
            out.push_str(&json_string(&att.media_type));
            out.push_str(",\"sha256\":\"");
            out.push_str(&hex::encode(Sha256::digest(&att.data)));
            out.push_str("\"}");
        }
    }
    out.push_str(",\"max_tokens\":");
    out.push_str(&request.max_tokens.to_string());
    out.push_str(",\"model_hint\":");
    out.push_str(&json_string(&request.model_hint));
    out.push_str(",\"rendered_prompt\":");
    out.push_str(&json_string(&request.rendered_prompt));
    out.push_str(",\"temperature\":");
    out.push_str(&json_string(&request.temperature.to_string()));
    out.push_str(",\"template_id\":");
    out.push_str(&json_string(request.template_id.as_str()));
    out.push('}');
    hex::encode(Sha256::digest(out.as_bytes()))
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}
