//! Prompt template registry.
//!
//! Templates are versioned data files, not code constants: one UTF-8 file per
//! template with YAML-style front matter declaring the template id and the
//! placeholders that must be bound at render time. Rendering fails when a
//! required placeholder is unbound or when any known placeholder survives
//! substitution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

/// Placeholder names a template body may contain.
pub const PLACEHOLDERS: [&str; 6] =
    ["text", "image_note", "reasoning", "evidence_text", "evidence_visual", "queries"];

/// Identifies one of the registered prompt templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Direct,
    Cot,
    InitialInference,
    ExternalKnowledge,
    QueryGeneration,
    TopicFilter,
    EvidenceExtraction,
    RefinedPrediction,
    ImageSummary,
}

impl TemplateId {
    pub const ALL: [TemplateId; 9] = [
        TemplateId::Direct,
        TemplateId::Cot,
        TemplateId::InitialInference,
        TemplateId::ExternalKnowledge,
        TemplateId::QueryGeneration,
        TemplateId::TopicFilter,
        TemplateId::EvidenceExtraction,
        TemplateId::RefinedPrediction,
        TemplateId::ImageSummary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Direct => "direct",
            TemplateId::Cot => "cot",
            TemplateId::InitialInference => "initial_inference",
            TemplateId::ExternalKnowledge => "external_knowledge",
            TemplateId::QueryGeneration => "query_generation",
            TemplateId::TopicFilter => "topic_filter",
            TemplateId::EvidenceExtraction => "evidence_extraction",
            TemplateId::RefinedPrediction => "refined_prediction",
            TemplateId::ImageSummary => "image_summary",
        }
    }

    pub fn from_str_id(s: &str) -> Option<TemplateId> {
        TemplateId::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One loaded template: body text plus the placeholders it requires.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    pub version: u32,
    pub body: String,
    pub required_placeholders: Vec<String>,
}

impl PromptTemplate {
    /// Parse a template file: `---` front matter with `template_id`,
    /// `version`, and `required_placeholders: [a, b]`, then the body.
    pub fn parse(source: &str) -> Result<PromptTemplate, PipelineError> {
        let rest = source
            .strip_prefix("---")
            .ok_or_else(|| PipelineError::Template("missing front matter opener".into()))?;
        let (front, body) = rest
            .split_once("\n---")
            .ok_or_else(|| PipelineError::Template("missing front matter terminator".into()))?;
        let mut template_id = None;
        let mut version = 1u32;
        let mut required = Vec::new();
        for line in front.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| PipelineError::Template(format!("bad front matter line: {line}")))?;
            let value = value.trim();
            match key.trim() {
                "template_id" => {
                    template_id = Some(TemplateId::from_str_id(value).ok_or_else(|| {
                        PipelineError::Template(format!("unknown template_id: {value}"))
                    })?)
                }
                "version" => {
                    version = value.parse().map_err(|_| {
                        PipelineError::Template(format!("bad version: {value}"))
                    })?
                }
                "required_placeholders" => {
                    let inner = value.trim_start_matches('[').trim_end_matches(']');
                    required = inner
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                }
                other => {
                    return Err(PipelineError::Template(format!(
                        "unknown front matter key: {other}"
                    )))
                }
            }
        }
        for name in &required {
            if !PLACEHOLDERS.contains(&name.as_str()) {
                return Err(PipelineError::Template(format!("unknown placeholder: {name}")));
            }
        }
        let template_id = template_id
            .ok_or_else(|| PipelineError::Template("front matter lacks template_id".into()))?;
        Ok(PromptTemplate {
            template_id,
            version,
            body: body.trim_start_matches('\n').to_string(),
            required_placeholders: required,
        })
    }

    /// Substitute bindings into the body. Every required placeholder must be
    /// bound; no known placeholder token may remain afterwards.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, PipelineError> {
        for name in &self.required_placeholders {
            if !bindings.contains_key(name.as_str()) {
                return Err(PipelineError::Template(format!(
                    "template {} requires unbound placeholder {{{name}}}",
                    self.template_id
                )));
            }
        }
        let mut out = self.body.clone();
        for (name, value) in bindings {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        for name in PLACEHOLDERS {
            if out.contains(&format!("{{{name}}}")) {
                return Err(PipelineError::Template(format!(
                    "template {} left placeholder {{{name}}} unresolved",
                    self.template_id
                )));
            }
        }
        Ok(out)
    }
}

/// All templates for one pipeline run, loaded from a registry directory with
/// one `<template_id>.txt` file per id.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl TemplateRegistry {
    pub fn load_dir(dir: &Path) -> Result<TemplateRegistry, PipelineError> {
        let mut templates = BTreeMap::new();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            let source = std::fs::read_to_string(&path).map_err(|e| {
                PipelineError::Template(format!("cannot read {}: {e}", path.display()))
            })?;
            let template = PromptTemplate::parse(&source)?;
            if template.template_id != id {
                return Err(PipelineError::Template(format!(
                    "{} declares template_id {}",
                    path.display(),
                    template.template_id
                )));
            }
            templates.insert(id, template);
        }
        Ok(TemplateRegistry { templates })
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        // load_dir guarantees every id is present
        &self.templates[&id]
    }

    pub fn render(
        &self,
        id: TemplateId,
        bindings: &BTreeMap<&str, String>,
    ) -> Result<String, PipelineError> {
        self.get(id).render(bindings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_front_matter_and_body() {
        let src = "---\ntemplate_id: direct\nversion: 2\nrequired_placeholders: [text, image_note]\n---\nPost: {text}\n{image_note}\n";
        let t = PromptTemplate::parse(src).unwrap();
        assert_eq!(t.template_id, TemplateId::Direct);
        assert_eq!(t.version, 2);
        assert_eq!(t.required_placeholders, vec!["text", "image_note"]);
        assert!(t.body.starts_with("Post: {text}"));
    }

    #[test]
    fn render_rejects_unbound_required_placeholder() {
        let src = "---\ntemplate_id: direct\nrequired_placeholders: [text]\n---\nPost: {text}";
        let t = PromptTemplate::parse(src).unwrap();
        let err = t.render(&BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("{text}"));
    }

    #[test]
    fn render_rejects_leftover_placeholder() {
        // body mentions a placeholder that is not required and not bound
        let src = "---\ntemplate_id: direct\nrequired_placeholders: [text]\n---\n{text} {reasoning}";
        let t = PromptTemplate::parse(src).unwrap();
        let mut b = BTreeMap::new();
        b.insert("text", "hi".to_string());
        let err = t.render(&b).unwrap_err();
        assert!(err.to_string().contains("{reasoning}"));
    }

    #[test]
    fn render_substitutes_all_bindings() {
        let src = "---\ntemplate_id: cot\nrequired_placeholders: [text, image_note]\n---\nA {text} B {image_note} C";
        let t = PromptTemplate::parse(src).unwrap();
        let mut b = BTreeMap::new();
        b.insert("text", "T".to_string());
        b.insert("image_note", "N".to_string());
        assert_eq!(t.render(&b).unwrap(), "A T B N C");
    }

    #[test]
    fn registry_loads_shipped_templates() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../prompts");
        let reg = TemplateRegistry::load_dir(&dir).unwrap();
        let cot = reg.get(TemplateId::Cot);
        assert!(cot.body.contains("Let's think step by step"));
        assert!(!reg.get(TemplateId::Direct).body.contains("Let's think step by step"));
        assert!(!reg.get(TemplateId::InitialInference).body.contains("Let's think step by step"));
    }
}
