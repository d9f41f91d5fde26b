//! Scripted model responses for tests and fixture authoring.

use std::sync::Mutex;

use super::{FinishReason, GatewayError, ModelRequest, ModelResponse};
use crate::prompts::TemplateId;

/// One scripted rule: fires when the template matches and every `contains`
/// needle appears in the rendered prompt.
#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub template_id: Option<TemplateId>,
    pub contains: Vec<String>,
    pub response: String,
    /// Remaining uses; `None` means unlimited.
    pub max_uses: Option<u32>,
}

impl ScriptRule {
    pub fn new(template_id: TemplateId, needle: &str, response: &str) -> ScriptRule {
        ScriptRule {
            template_id: Some(template_id),
            contains: vec![needle.to_string()],
            response: response.to_string(),
            max_uses: None,
        }
    }

    pub fn any_template(needle: &str, response: &str) -> ScriptRule {
        ScriptRule {
            template_id: None,
            contains: vec![needle.to_string()],
            response: response.to_string(),
            max_uses: None,
        }
    }

    pub fn with_uses(mut self, uses: u32) -> ScriptRule {
        self.max_uses = Some(uses);
        self
    }
}

/// Matches requests against an ordered rule list. Matching is content-based
/// (template id plus prompt substrings) so concurrent calls resolve
/// deterministically regardless of arrival order.
#[derive(Debug, Default)]
pub struct ScriptedModel {
    rules: Mutex<Vec<ScriptRule>>,
}

impl ScriptedModel {
    pub fn new(rules: Vec<ScriptRule>) -> ScriptedModel {
        ScriptedModel { rules: Mutex::new(rules) }
    }

    /// Single canned response regardless of input.
    pub fn always(response: &str) -> ScriptedModel {
        ScriptedModel::new(vec![ScriptRule {
            template_id: None,
            contains: vec![],
            response: response.to_string(),
            max_uses: None,
        }])
    }

    pub fn respond(&self, request: &ModelRequest, digest: &str) -> Result<ModelResponse, GatewayError> {
        let mut rules = self.rules.lock().expect("script lock poisoned");
        for rule in rules.iter_mut() {
            if let Some(t) = rule.template_id {
                if t != request.template_id {
                    continue;
                }
            }
            if !rule.contains.iter().all(|n| request.rendered_prompt.contains(n.as_str())) {
                continue;
            }
            if let Some(uses) = &mut rule.max_uses {
                if *uses == 0 {
                    continue;
                }
                *uses -= 1;
            }
            return Ok(ModelResponse {
                text: rule.response.clone(),
                finish_reason: FinishReason::Complete,
                provider_latency_ms: 0,
                request_digest: digest.to_string(),
            });
        }
        Err(GatewayError::FixtureMissing {
            digest: digest.to_string(),
            detail: format!(
                "no scripted response for template {} (prompt starts {:?})",
                request.template_id,
                request.rendered_prompt.chars().take(60).collect::<String>()
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(template_id: TemplateId, prompt: &str) -> ModelRequest {
        ModelRequest {
            template_id,
            rendered_prompt: prompt.into(),
            image_attachment: None,
            model_hint: "m".into(),
            max_tokens: 16,
            temperature: 0.0,
        }
    }

    #[test]
    fn first_matching_rule_wins() {
        let model = ScriptedModel::new(vec![
            ScriptRule::new(TemplateId::Direct, "alpha", "A"),
            ScriptRule::new(TemplateId::Direct, "", "B"),
        ]);
        let r = model.respond(&request(TemplateId::Direct, "has alpha inside"), "d1").unwrap();
        assert_eq!(r.text, "A");
        let r = model.respond(&request(TemplateId::Direct, "something else"), "d2").unwrap();
        assert_eq!(r.text, "B");
    }

    #[test]
    fn use_limits_are_consumed() {
        let model = ScriptedModel::new(vec![
            ScriptRule::new(TemplateId::Direct, "x", "first").with_uses(1),
            ScriptRule::new(TemplateId::Direct, "x", "second"),
        ]);
        assert_eq!(model.respond(&request(TemplateId::Direct, "x"), "d").unwrap().text, "first");
        assert_eq!(model.respond(&request(TemplateId::Direct, "x"), "d").unwrap().text, "second");
    }

    #[test]
    fn unmatched_request_is_an_error() {
        let model = ScriptedModel::new(vec![ScriptRule::new(TemplateId::Cot, "x", "r")]);
        assert!(model.respond(&request(TemplateId::Direct, "x"), "d").is_err());
    }
}
