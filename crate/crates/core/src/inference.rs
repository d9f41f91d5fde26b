//! Baseline prompting, initial-stage inference, the external-knowledge gate,
//! and verdict parsing from free-text model output.
//!
//! Parsing runs in three stages: a strict key-value scan for a verdict line,
//! a fallback keyword scan with negation handling, and — when both fail — a
//! single repair call asking the model to restate its answer in the strict
//! format. Every parse site gets exactly one repair retry.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::PipelineError;
use crate::gateway::{Gateway, ImageAttachment, ModelRequest};
use crate::model::{BinaryLabel, DirectResult, PostRecord, PromptVariant};
use crate::prompts::{TemplateId, TemplateRegistry};

/// Decoding knobs applied to every stage's requests.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub model_hint: String,
    pub max_tokens: u32,
    pub temperature: f32,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { model_hint: "gpt-4v".into(), max_tokens: 1024, temperature: 0.0 }
    }
}

impl ModelParams {
    pub fn request(
        &self,
        template_id: TemplateId,
        rendered_prompt: String,
        image_attachment: Option<ImageAttachment>,
    ) -> ModelRequest {
        ModelRequest {
            template_id,
            rendered_prompt,
            image_attachment,
            model_hint: self.model_hint.clone(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
        }
    }
}

/// Everything an inference call needs: transport, templates, and knobs.
#[derive(Clone, Copy)]
pub struct InferenceCtx<'a> {
    pub gateway: &'a Gateway,
    pub registry: &'a TemplateRegistry,
    pub params: &'a ModelParams,
}

pub(crate) fn image_note(image: Option<&ImageAttachment>) -> String {
    match image {
        Some(_) => "An image is attached to this post.".to_string(),
        None => "No image is attached to this post.".to_string(),
    }
}

fn repair_prompt(previous_reply: &str, format_hint: &str) -> String {
    format!(
        "Your previous reply could not be parsed.\n\nPrevious reply:\n{previous_reply}\n\n\
         Restate your final answer in exactly the required format, with nothing else:\n{format_hint}"
    )
}

/// Issue a request, parse the reply, and on failure make exactly one repair
/// call before giving up.
pub(crate) async fn complete_with_repair<T>(
    ctx: InferenceCtx<'_>,
    request: ModelRequest,
    stage: &'static str,
    format_hint: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<(T, String), PipelineError> {
    let response = ctx.gateway.complete(&request).await?;
    if let Some(value) = parse(&response.text) {
        return Ok((value, response.text));
    }
    tracing::debug!(stage, "unparseable reply, issuing repair call");
    let repair = ModelRequest {
        rendered_prompt: repair_prompt(&response.text, format_hint),
        image_attachment: None,
        ..request
    };
    let repaired = ctx.gateway.complete(&repair).await?;
    match parse(&repaired.text) {
        Some(value) => Ok((value, repaired.text)),
        None => Err(PipelineError::parse(
            stage,
            format!("unparseable even after repair: {:?}", truncate_for_log(&repaired.text)),
        )),
    }
}

fn truncate_for_log(s: &str) -> String {
    s.chars().take(120).collect()
}

// ---------------------------------------------------------------------------
// Verdict parsing
// ---------------------------------------------------------------------------

fn verdict_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^[\s*#>\-]*(?:final\s+)?(?:verdict|prediction|answer|label|classification|decision)\s*[:=]\s*(.+)$",
        )
        .expect("static regex")
    })
}

fn reason_key_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^[\s*#>\-]*(?:reason|rationale|reasoning|explanation)\s*[:=]\s*")
            .expect("static regex")
    })
}

fn label_from_value(value: &str) -> Option<BinaryLabel> {
    let v = value.to_lowercase();
    if v.contains("non-misinformation")
        || v.contains("non misinformation")
        || v.contains("not misinformation")
        || v.contains("no misinformation")
    {
        return Some(BinaryLabel::NonMisinformation);
    }
    if v.contains("misinformation") {
        return Some(BinaryLabel::Misinformation);
    }
    if ["fake", "false", "fabricated", "misleading", "rumor"].iter().any(|k| v.contains(k)) {
        return Some(BinaryLabel::Misinformation);
    }
    if ["real", "true", "genuine", "authentic", "accurate"].iter().any(|k| v.contains(k)) {
        return Some(BinaryLabel::NonMisinformation);
    }
    None
}

const NEGATORS: [&str; 12] =
    ["not", "no", "non", "never", "cannot", "isn", "aren", "wasn", "weren", "doesn", "don", "didn"];

fn fallback_scan(raw: &str) -> Option<BinaryLabel> {
    let lower = raw.to_lowercase();
    let tokens: Vec<&str> =
        lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
    for (i, token) in tokens.iter().enumerate() {
        let base = match *token {
            "misinformation" | "fake" | "false" | "fabricated" | "misleading" | "rumor" => {
                Some(BinaryLabel::Misinformation)
            }
            "real" | "genuine" | "authentic" | "accurate" | "truthful" => {
                Some(BinaryLabel::NonMisinformation)
            }
            _ => None,
        };
        if let Some(base) = base {
            let window_start = i.saturating_sub(4);
            let negated = tokens[window_start..i].iter().any(|t| NEGATORS.contains(t));
            let label = if negated {
                match base {
                    BinaryLabel::Misinformation => BinaryLabel::NonMisinformation,
                    BinaryLabel::NonMisinformation => BinaryLabel::Misinformation,
                }
            } else {
                base
            };
            return Some(label);
        }
    }
    None
}

/// Extract a binary verdict and rationale from free-text model output.
///
/// Returns `None` when neither the strict verdict-line scan nor the fallback
/// keyword scan finds a label; callers then get one repair call via
/// [`complete_with_repair`]. The rationale is everything outside the verdict
/// line, with a leading `reason:`-style key stripped.
pub fn parse_verdict(raw: &str) -> Option<(BinaryLabel, String)> {
    for (idx, line) in raw.lines().enumerate() {
        if let Some(caps) = verdict_line_re().captures(line) {
            if let Some(label) = label_from_value(&caps[1]) {
                let rest: Vec<&str> = raw
                    .lines()
                    .enumerate()
                    .filter(|(i, _)| *i != idx)
                    .map(|(_, l)| l)
                    .collect();
                let mut rationale = rest.join("\n").trim().to_string();
                rationale = reason_key_re().replace(&rationale, "").to_string();
                if rationale.is_empty() {
                    rationale = raw.trim().to_string();
                }
                return Some((label, rationale));
            }
        }
    }
    fallback_scan(raw).map(|label| (label, raw.trim().to_string()))
}

const VERDICT_FORMAT_HINT: &str =
    "prediction: misinformation\nOR\nprediction: non-misinformation\n(then a line starting with \"reason:\")";

// ---------------------------------------------------------------------------
// Inference operations
// ---------------------------------------------------------------------------

pub(crate) fn build_direct_request(
    ctx: InferenceCtx<'_>,
    post: &PostRecord,
    image: Option<&ImageAttachment>,
    template_id: TemplateId,
    note_override: Option<String>,
) -> Result<ModelRequest, PipelineError> {
    let mut bindings = BTreeMap::new();
    bindings.insert("text", post.text.clone());
    bindings.insert("image_note", note_override.unwrap_or_else(|| image_note(image)));
    let prompt = ctx.registry.render(template_id, &bindings)?;
    Ok(ctx.params.request(template_id, prompt, image.cloned()))
}

async fn run_verdict_stage(
    ctx: InferenceCtx<'_>,
    post: &PostRecord,
    image: Option<&ImageAttachment>,
    template_id: TemplateId,
    variant: PromptVariant,
    note_override: Option<String>,
) -> Result<DirectResult, PipelineError> {
    let request = build_direct_request(ctx, post, image, template_id, note_override)?;
    let ((prediction, rationale), _raw) =
        complete_with_repair(ctx, request, "parse_verdict", VERDICT_FORMAT_HINT, |raw| {
            parse_verdict(raw)
        })
        .await?;
    Ok(DirectResult { prediction, rationale, needs_external: false, prompt_variant: variant })
}

/// Baseline prompting: one model call, verdict plus rationale.
///
/// The CoT variant elicits reasoning before the verdict via the step-by-step
/// instruction; the direct variant asks for the verdict first.
pub async fn run_direct(
    ctx: InferenceCtx<'_>,
    post: &PostRecord,
    image: Option<&ImageAttachment>,
    variant: PromptVariant,
) -> Result<DirectResult, PipelineError> {
    let template_id = match variant {
        PromptVariant::Direct => TemplateId::Direct,
        PromptVariant::CoT => TemplateId::Cot,
    };
    run_verdict_stage(ctx, post, image, template_id, variant, None).await
}

/// Baseline prompting for a text-only reader: the image is first converted to
/// a textual summary which replaces the attachment.
pub async fn run_direct_with_summary(
    ctx: InferenceCtx<'_>,
    post: &PostRecord,
    image: &ImageAttachment,
    variant: PromptVariant,
) -> Result<DirectResult, PipelineError> {
    let summary = summarize_image(ctx, image).await?;
    let template_id = match variant {
        PromptVariant::Direct => TemplateId::Direct,
        PromptVariant::CoT => TemplateId::Cot,
    };
    let note = format!("Image description: {summary}");
    run_verdict_stage(ctx, post, None, template_id, variant, Some(note)).await
}

/// Initial-stage inference: like the direct baseline but with an output
/// example, so the rationale is structured enough to drive the later stages.
pub async fn run_initial(
    ctx: InferenceCtx<'_>,
    post: &PostRecord,
    image: Option<&ImageAttachment>,
) -> Result<DirectResult, PipelineError> {
    run_verdict_stage(ctx, post, image, TemplateId::InitialInference, PromptVariant::Direct, None)
        .await
}

/// Strict yes/no extraction: leading token, then a key-value line, then the
/// first standalone yes/no anywhere.
pub fn parse_yes_no(raw: &str) -> Option<bool> {
    let lower = raw.to_lowercase();
    let tokens: Vec<&str> =
        lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
    match tokens.first() {
        Some(&"yes") => return Some(true),
        Some(&"no") => return Some(false),
        _ => {}
    }
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)(?:answer|decision|necessity|needed?|external knowledge)\s*[:=]\s*(yes|no)\b")
            .expect("static regex")
    });
    if let Some(caps) = re.captures(&lower) {
        return Some(&caps[1] == "yes");
    }
    tokens.iter().find_map(|t| match *t {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    })
}

/// The external-knowledge gate: shows the model its own rationale and the
/// gating rules, and parses a strict yes/no. Never mutates the direct result.
pub async fn assess_external_need(
    ctx: InferenceCtx<'_>,
    post: &PostRecord,
    direct: &DirectResult,
) -> Result<bool, PipelineError> {
    let mut bindings = BTreeMap::new();
    bindings.insert("text", post.text.clone());
    bindings.insert("reasoning", direct.rationale.clone());
    let prompt = ctx.registry.render(TemplateId::ExternalKnowledge, &bindings)?;
    let request = ctx.params.request(TemplateId::ExternalKnowledge, prompt, None);
    let (need, _raw) =
        complete_with_repair(ctx, request, "assess_external_need", "yes\nOR\nno", |raw| {
            parse_yes_no(raw)
        })
        .await?;
    Ok(need)
}

/// Produce a textual description of an image for text-only consumers.
pub async fn summarize_image(
    ctx: InferenceCtx<'_>,
    image: &ImageAttachment,
) -> Result<String, PipelineError> {
    let prompt = ctx.registry.render(TemplateId::ImageSummary, &BTreeMap::new())?;
    let request = ctx.params.request(TemplateId::ImageSummary, prompt, Some(image.clone()));
    let response = ctx.gateway.complete(&request).await?;
    let summary = response.text.trim().to_string();
    if summary.is_empty() {
        return Err(PipelineError::parse("summarize_image", "empty summary"));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptRule, ScriptedModel};
    use crate::model::SourceDataset;
    use std::path::Path;

    fn registry() -> TemplateRegistry {
        TemplateRegistry::load_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../prompts"))
            .unwrap()
    }

    fn post() -> PostRecord {
        PostRecord {
            id: "p1".into(),
            text: "Germany installed brand new solar panels across Bavaria last week".into(),
            image: None,
            gold_label: None,
            language: None,
            source_dataset: SourceDataset::Custom,
        }
    }

    #[test]
    fn strict_verdict_line_parses() {
        let (label, rationale) =
            parse_verdict("Verdict: misinformation\nReason: dates conflict").unwrap();
        assert_eq!(label, BinaryLabel::Misinformation);
        assert_eq!(rationale, "dates conflict");
    }

    #[test]
    fn prediction_key_and_hyphenated_label() {
        let (label, rationale) =
            parse_verdict("prediction: non-misinformation\nreason: consistent").unwrap();
        assert_eq!(label, BinaryLabel::NonMisinformation);
        assert_eq!(rationale, "consistent");
    }

    #[test]
    fn fallback_scan_handles_negation() {
        let (label, _) = parse_verdict("This post is not misinformation because …").unwrap();
        assert_eq!(label, BinaryLabel::NonMisinformation);
        let (label, _) = parse_verdict("The photo is clearly fake.").unwrap();
        assert_eq!(label, BinaryLabel::Misinformation);
        let (label, _) = parse_verdict("The event described is not real.").unwrap();
        assert_eq!(label, BinaryLabel::Misinformation);
    }

    #[test]
    fn unparseable_output_returns_none() {
        assert!(parse_verdict("I cannot determine.").is_none());
        assert!(parse_verdict("The image shows a crowded street.").is_none());
    }

    #[test]
    fn parse_verdict_is_idempotent_on_its_own_rendering() {
        let samples = [
            "Verdict: misinformation\nReason: dates conflict",
            "This post is not misinformation because the image matches",
            "prediction: non-misinformation\nreason: consistent",
        ];
        for raw in samples {
            let (label, rationale) = parse_verdict(raw).unwrap();
            let rendering = format!(
                "prediction: {}\nreason: {rationale}",
                match label {
                    BinaryLabel::Misinformation => "misinformation",
                    BinaryLabel::NonMisinformation => "non-misinformation",
                }
            );
            let (again, _) = parse_verdict(&rendering).unwrap();
            assert_eq!(again, label);
        }
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no("no"), Some(false));
        assert_eq!(parse_yes_no("Yes."), Some(true));
        assert_eq!(parse_yes_no("Yes — the date claim needs verification."), Some(true));
        assert_eq!(parse_yes_no("answer: no"), Some(false));
        assert_eq!(parse_yes_no("I believe the answer is yes"), Some(true));
        assert_eq!(parse_yes_no("maybe"), None);
    }

    #[tokio::test]
    async fn run_direct_parses_wellformed_scripted_output() {
        let gateway = Gateway::scripted(ScriptedModel::always(
            "prediction: non-misinformation\nreason: consistent",
        ));
        let registry = registry();
        let params = ModelParams::default();
        let ctx = InferenceCtx { gateway: &gateway, registry: &registry, params: &params };
        let result = run_direct(ctx, &post(), None, PromptVariant::Direct).await.unwrap();
        assert_eq!(result.prediction, BinaryLabel::NonMisinformation);
        assert_eq!(result.rationale, "consistent");
        assert!(!result.needs_external);
    }

    #[tokio::test]
    async fn cot_prompt_carries_step_by_step_and_direct_does_not() {
        let registry = registry();
        let params = ModelParams::default();
        let gateway = Gateway::scripted(ScriptedModel::always("prediction: misinformation\nreason: r"));
        let ctx = InferenceCtx { gateway: &gateway, registry: &registry, params: &params };
        let cot = build_direct_request(ctx, &post(), None, TemplateId::Cot, None).unwrap();
        assert!(cot.rendered_prompt.contains("Let's think step by step"));
        let direct = build_direct_request(ctx, &post(), None, TemplateId::Direct, None).unwrap();
        assert!(!direct.rendered_prompt.contains("Let's think step by step"));
    }

    #[tokio::test]
    async fn repair_retry_recovers_then_parse_failure_after_second_miss() {
        let registry = registry();
        let params = ModelParams::default();

        // Garbage once, then a strict restatement: recovered.
        let gateway = Gateway::scripted(ScriptedModel::new(vec![
            ScriptRule::any_template("", "I cannot determine.").with_uses(1),
            ScriptRule::any_template("", "prediction: misinformation\nreason: repaired"),
        ]));
        let ctx = InferenceCtx { gateway: &gateway, registry: &registry, params: &params };
        let result = run_direct(ctx, &post(), None, PromptVariant::Direct).await.unwrap();
        assert_eq!(result.prediction, BinaryLabel::Misinformation);
        assert_eq!(result.rationale, "repaired");

        // Garbage twice: parse failure.
        let gateway = Gateway::scripted(ScriptedModel::always("I cannot determine."));
        let ctx = InferenceCtx { gateway: &gateway, registry: &registry, params: &params };
        let err = run_direct(ctx, &post(), None, PromptVariant::Direct).await.unwrap_err();
        assert!(matches!(err, PipelineError::ParseFailure { .. }));
        assert_eq!(gateway.call_count(), 2);
    }

    #[tokio::test]
    async fn gate_reads_scripted_answer() {
        let registry = registry();
        let params = ModelParams::default();
        let gateway = Gateway::scripted(ScriptedModel::always("no"));
        let ctx = InferenceCtx { gateway: &gateway, registry: &registry, params: &params };
        let direct = DirectResult {
            prediction: BinaryLabel::NonMisinformation,
            rationale: "the image plainly matches the text".into(),
            needs_external: false,
            prompt_variant: PromptVariant::Direct,
        };
        let before = direct.clone();
        let need = assess_external_need(ctx, &post(), &direct).await.unwrap();
        assert!(!need);
        assert_eq!(direct, before);
    }

    #[tokio::test]
    async fn summarize_image_requires_nonempty_text() {
        let registry = registry();
        let params = ModelParams::default();
        let image = ImageAttachment { data: vec![0u8; 4], media_type: "image/png".into() };

        let gateway = Gateway::scripted(ScriptedModel::always("A photo of solar panels."));
        let ctx = InferenceCtx { gateway: &gateway, registry: &registry, params: &params };
        assert_eq!(summarize_image(ctx, &image).await.unwrap(), "A photo of solar panels.");

        let gateway = Gateway::scripted(ScriptedModel::always("   "));
        let ctx = InferenceCtx { gateway: &gateway, registry: &registry, params: &params };
        assert!(summarize_image(ctx, &image).await.is_err());
    }
}
