//! Shared domain types, label algebra, and the category-to-binary mapping
//! rule consumed by every pipeline stage.
//!
//! All types here are immutable after construction and safe to share across
//! concurrent tasks. Every type has a canonical JSON encoding: snake_case
//! field names, dates as ISO-8601 strings, enums as lowercase strings (fine
//! categories additionally carry their numeric tag).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default minimum post text length (characters, after whitespace collapse).
pub const DEFAULT_MIN_TEXT_LEN: usize = 20;
/// Default cap on a single evidence segment, in characters.
pub const DEFAULT_SEGMENT_MAX_CHARS: usize = 600;

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// Binary verdict over a post.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Misinformation,
    NonMisinformation,
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinaryLabel::Misinformation => f.write_str("misinformation"),
            BinaryLabel::NonMisinformation => f.write_str("non_misinformation"),
        }
    }
}

/// Fine-grained six-way category assigned by the refined prediction stage.
///
/// Numeric tags 1–6 are stable across serialization; the wire format carries
/// both the tag and the lowercase name, e.g. `{"tag":3,"name":"misleading_content"}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FineCategory {
    True,
    Satire,
    MisleadingContent,
    FalseConnection,
    ManipulatedContent,
    Unverified,
}

impl FineCategory {
    pub const ALL: [FineCategory; 6] = [
        FineCategory::True,
        FineCategory::Satire,
        FineCategory::MisleadingContent,
        FineCategory::FalseConnection,
        FineCategory::ManipulatedContent,
        FineCategory::Unverified,
    ];

    pub fn tag(self) -> u8 {
        match self {
            FineCategory::True => 1,
            FineCategory::Satire => 2,
            FineCategory::MisleadingContent => 3,
            FineCategory::FalseConnection => 4,
            FineCategory::ManipulatedContent => 5,
            FineCategory::Unverified => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FineCategory::True => "true",
            FineCategory::Satire => "satire",
            FineCategory::MisleadingContent => "misleading_content",
            FineCategory::FalseConnection => "false_connection",
            FineCategory::ManipulatedContent => "manipulated_content",
            FineCategory::Unverified => "unverified",
        }
    }

    pub fn from_tag(tag: u8) -> Option<FineCategory> {
        FineCategory::ALL.iter().copied().find(|c| c.tag() == tag)
    }

    pub fn from_name(name: &str) -> Option<FineCategory> {
        FineCategory::ALL.iter().copied().find(|c| c.name() == name)
    }
}

impl fmt::Display for FineCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Serialize, Deserialize)]
struct FineCategoryWire {
    tag: u8,
    name: String,
}

impl Serialize for FineCategory {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        FineCategoryWire { tag: self.tag(), name: self.name().to_string() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FineCategory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = FineCategoryWire::deserialize(deserializer)?;
        let by_tag = FineCategory::from_tag(wire.tag)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown category tag {}", wire.tag)))?;
        if by_tag.name() != wire.name {
            return Err(serde::de::Error::custom(format!(
                "category tag {} does not match name {:?}",
                wire.tag, wire.name
            )));
        }
        Ok(by_tag)
    }
}

/// Which baseline prompting style produced a direct result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptVariant {
    #[serde(rename = "direct")]
    Direct,
    #[serde(rename = "cot")]
    CoT,
}

/// Dataset a post came from, kept for label traceability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceDataset {
    Twitter,
    Fakeddit,
    #[default]
    Custom,
}

// ---------------------------------------------------------------------------
// Posts
// ---------------------------------------------------------------------------

/// The image half of an image–text pair: inline bytes or a resolvable
/// reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageRef {
    Inline {
        #[serde(with = "base64_bytes")]
        data: Vec<u8>,
        media_type: String,
    },
    Path { path: PathBuf },
    Url { url: String },
}

mod base64_bytes {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        base64::engine::general_purpose::STANDARD
            .decode(s.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

/// One image–text post: the unit of work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub id: String,
    pub text: String,
    pub image: Option<ImageRef>,
    pub gold_label: Option<BinaryLabel>,
    pub language: Option<String>,
    #[serde(default)]
    pub source_dataset: SourceDataset,
}

/// Why a record was rejected at pipeline entry.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SkipReason {
    #[error("text empty after trimming")]
    EmptyText,
    #[error("text of {len} chars below minimum {min}")]
    TextTooShort { len: usize, min: usize },
    #[error("image required but missing")]
    MissingImage,
    #[error("image file unreadable: {0}")]
    ImageUnreadable(String),
    #[error("image does not decode: {0}")]
    ImageUndecodable(String),
    #[error("image url invalid: {0}")]
    InvalidImageUrl(String),
}

impl SkipReason {
    /// Stable machine-readable code, used for skip accounting in reports.
    pub fn code(&self) -> &'static str {
        match self {
            SkipReason::EmptyText => "empty_text",
            SkipReason::TextTooShort { .. } => "text_too_short",
            SkipReason::MissingImage => "missing_image",
            SkipReason::ImageUnreadable(_) => "image_unreadable",
            SkipReason::ImageUndecodable(_) => "image_undecodable",
            SkipReason::InvalidImageUrl(_) => "invalid_image_url",
        }
    }
}

/// Collapse runs of whitespace into single spaces and trim the ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !last_space {
                out.push(' ');
                last_space = true;
            }
        } else {
            out.push(ch);
            last_space = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Gate a record at pipeline entry.
///
/// A record passes when its collapsed text is at least `min_text_len`
/// characters (inclusive) and, when `require_image` is set, its image is
/// present and decodes. URL image references are checked for shape only;
/// their bytes are resolved at fetch time.
pub fn validate_post(
    record: &PostRecord,
    min_text_len: usize,
    require_image: bool,
) -> Result<(), SkipReason> {
    let collapsed = collapse_whitespace(&record.text);
    if collapsed.is_empty() {
        return Err(SkipReason::EmptyText);
    }
    let len = collapsed.chars().count();
    if len < min_text_len {
        return Err(SkipReason::TextTooShort { len, min: min_text_len });
    }
    match (&record.image, require_image) {
        (None, true) => return Err(SkipReason::MissingImage),
        (None, false) => {}
        (Some(image), _) => check_image_decodes(image)?,
    }
    Ok(())
}

fn check_image_decodes(image: &ImageRef) -> Result<(), SkipReason> {
    match image {
        ImageRef::Inline { data, .. } => image::load_from_memory(data)
            .map(|_| ())
            .map_err(|e| SkipReason::ImageUndecodable(e.to_string())),
        ImageRef::Path { path } => {
            let bytes = std::fs::read(path)
                .map_err(|e| SkipReason::ImageUnreadable(format!("{}: {e}", path.display())))?;
            image::load_from_memory(&bytes)
                .map(|_| ())
                .map_err(|e| SkipReason::ImageUndecodable(e.to_string()))
        }
        ImageRef::Url { url } => match url::Url::parse(url) {
            Ok(parsed) if !parsed.cannot_be_a_base() => Ok(()),
            _ => Err(SkipReason::InvalidImageUrl(url.clone())),
        },
    }
}

/// Resolve an image reference's path relative to a base directory.
pub fn resolve_image_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() { path.to_path_buf() } else { base.join(path) }
}

// ---------------------------------------------------------------------------
// Stage outputs
// ---------------------------------------------------------------------------

/// First-stage prediction plus rationale plus the external-knowledge flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectResult {
    pub prediction: BinaryLabel,
    pub rationale: String,
    pub needs_external: bool,
    pub prompt_variant: PromptVariant,
}

impl DirectResult {
    /// Copy with the external-knowledge flag resolved; the original is never
    /// mutated (gating is a pure read).
    pub fn with_needs_external(&self, needs_external: bool) -> DirectResult {
        DirectResult { needs_external, ..self.clone() }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuerySetError {
    #[error("title must carry the \"fake news \" prefix: {0:?}")]
    MissingPrefix(String),
    #[error("expected exactly 2 questions, got {0}")]
    QuestionCount(usize),
    #[error("question {0} is empty")]
    EmptyQuestion(usize),
}

/// Generated search title plus exactly two verification questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQuerySet")]
pub struct QuerySet {
    title: String,
    questions: Vec<String>,
}

#[derive(Deserialize)]
struct RawQuerySet {
    title: String,
    questions: Vec<String>,
}

impl TryFrom<RawQuerySet> for QuerySet {
    type Error = QuerySetError;
    fn try_from(raw: RawQuerySet) -> Result<Self, Self::Error> {
        QuerySet::new(raw.title, raw.questions)
    }
}

impl QuerySet {
    /// Build a validated query set. Questions are normalized (trimmed,
    /// trailing punctuation replaced with `?`); the title must already carry
    /// the `"fake news "` prefix — use [`QuerySet::ensure_prefix`] to add it
    /// mechanically first.
    pub fn new(title: String, questions: Vec<String>) -> Result<QuerySet, QuerySetError> {
        if !Self::has_prefix(&title) {
            return Err(QuerySetError::MissingPrefix(title));
        }
        if questions.len() != 2 {
            return Err(QuerySetError::QuestionCount(questions.len()));
        }
        let mut normalized = Vec::with_capacity(2);
        for (i, q) in questions.into_iter().enumerate() {
            let q = Self::normalize_question(&q);
            if q == "?" {
                return Err(QuerySetError::EmptyQuestion(i + 1));
            }
            normalized.push(q);
        }
        Ok(QuerySet { title: collapse_whitespace(&title), questions: normalized })
    }

    /// Case-insensitive check that the first nine characters spell
    /// `fake news` and are followed by a separator.
    pub fn has_prefix(title: &str) -> bool {
        let bytes = title.as_bytes();
        bytes.len() >= 10
            && bytes[..9].eq_ignore_ascii_case(b"fake news")
            && (bytes[9] as char).is_whitespace()
    }

    /// Prepend the prefix when the model omitted it.
    pub fn ensure_prefix(title: &str) -> String {
        let title = title.trim();
        if Self::has_prefix(title) { title.to_string() } else { format!("fake news {title}") }
    }

    fn normalize_question(q: &str) -> String {
        let mut q = collapse_whitespace(q);
        while q.ends_with(['.', '!', ';', ',']) {
            q.pop();
            while q.ends_with(' ') {
                q.pop();
            }
        }
        if !q.ends_with('?') {
            q.push('?');
        }
        q
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn questions(&self) -> &[String] {
        &self.questions
    }

    /// Query strings in fixed search order: title, question 1, question 2.
    pub fn members(&self) -> [(QueryOrigin, &str); 3] {
        [
            (QueryOrigin::Title, self.title.as_str()),
            (QueryOrigin::Question1, self.questions[0].as_str()),
            (QueryOrigin::Question2, self.questions[1].as_str()),
        ]
    }
}

/// Which query-set member produced a web document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOrigin {
    Title,
    Question1,
    Question2,
}

/// One search hit, optionally enriched with fetched page content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebDocument {
    pub url: String,
    pub web_title: String,
    pub snippet: String,
    pub query_origin: QueryOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fetched_body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub publication_date: Option<String>,
}

impl WebDocument {
    /// Build a document from a raw search hit; rejects relative or
    /// unparseable URLs.
    pub fn from_hit(
        url: String,
        web_title: String,
        snippet: String,
        query_origin: QueryOrigin,
    ) -> Result<WebDocument, String> {
        match url::Url::parse(&url) {
            Ok(parsed) if !parsed.cannot_be_a_base() => Ok(WebDocument {
                url,
                web_title,
                snippet,
                query_origin,
                fetched_body: None,
                publication_date: None,
            }),
            _ => Err(format!("invalid url: {url}")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("evidence triplet has no segments")]
    NoSegments,
    #[error("segment {index} is {len} chars, cap is {cap}")]
    SegmentTooLong { index: usize, len: usize, cap: usize },
}

/// Distilled textual evidence from one web document: key segments plus the
/// source title and publication date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTriplet {
    pub segments: Vec<String>,
    pub web_title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub publication_date: Option<String>,
}

impl EvidenceTriplet {
    pub fn new(
        segments: Vec<String>,
        web_title: String,
        publication_date: Option<String>,
        segment_cap: usize,
    ) -> Result<EvidenceTriplet, EvidenceError> {
        if segments.is_empty() {
            return Err(EvidenceError::NoSegments);
        }
        for (index, seg) in segments.iter().enumerate() {
            let len = seg.chars().count();
            if len > segment_cap {
                return Err(EvidenceError::SegmentTooLong { index, len, cap: segment_cap });
            }
        }
        Ok(EvidenceTriplet { segments, web_title, publication_date })
    }
}

/// Titles of pages where the post's image previously appeared. Empty when the
/// image was never reused elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VisualEvidence {
    pub page_titles: Vec<String>,
}

impl VisualEvidence {
    /// Deduplicates case-insensitively, keeping the first occurrence.
    pub fn new(titles: Vec<String>) -> VisualEvidence {
        let mut seen = std::collections::HashSet::new();
        let page_titles = titles
            .into_iter()
            .filter(|t| seen.insert(t.to_lowercase()))
            .collect();
        VisualEvidence { page_titles }
    }

    pub fn empty() -> VisualEvidence {
        VisualEvidence::default()
    }

    pub fn is_empty(&self) -> bool {
        self.page_titles.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Final verdict
// ---------------------------------------------------------------------------

/// How a verdict was reached, for audit trails and reports.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// Gating said no external knowledge was needed; the verdict wraps the
    /// direct prediction without any retrieval.
    pub direct_only: bool,
    /// The refined stage's output was unparseable even after repair.
    pub refine_parse_failed: bool,
    /// Retrieval ran because an ablation forced it, not because gating asked.
    pub forced_retrieval: bool,
    /// Non-fatal anomalies encountered along the way, in stage order.
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerdictError {
    #[error("fell_back_to_direct must be true exactly when category is unverified")]
    FallbackFlagMismatch,
    #[error("fallback verdict must keep the direct prediction")]
    FallbackLabelMismatch,
    #[error("category {category} requires binary label {expected}")]
    CategoryLabelMismatch { category: FineCategory, expected: BinaryLabel },
}

/// Final pipeline output: fine-grained category, resolved binary label, and
/// the full provenance trail.
///
/// Construction enforces three invariants: `fell_back_to_direct` holds
/// exactly when the category is `unverified`; a fallback keeps the direct
/// prediction; and the category determines the binary label for categories
/// 1–5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFinalVerdict")]
pub struct FinalVerdict {
    category: FineCategory,
    binary: BinaryLabel,
    used_external: bool,
    fell_back_to_direct: bool,
    direct: DirectResult,
    evidence_text: Vec<EvidenceTriplet>,
    evidence_visual: VisualEvidence,
    refined_rationale: Option<String>,
    provenance: Provenance,
}

/// Unvalidated mirror of [`FinalVerdict`] used for deserialization.
#[derive(Debug, Clone, Deserialize)]
pub struct RawFinalVerdict {
    pub category: FineCategory,
    pub binary: BinaryLabel,
    pub used_external: bool,
    pub fell_back_to_direct: bool,
    pub direct: DirectResult,
    #[serde(default)]
    pub evidence_text: Vec<EvidenceTriplet>,
    #[serde(default)]
    pub evidence_visual: VisualEvidence,
    #[serde(default)]
    pub refined_rationale: Option<String>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl TryFrom<RawFinalVerdict> for FinalVerdict {
    type Error = VerdictError;

    fn try_from(raw: RawFinalVerdict) -> Result<Self, Self::Error> {
        let fallback = raw.category == FineCategory::Unverified;
        if raw.fell_back_to_direct != fallback {
            return Err(VerdictError::FallbackFlagMismatch);
        }
        if fallback {
            if raw.binary != raw.direct.prediction {
                return Err(VerdictError::FallbackLabelMismatch);
            }
        } else {
            let expected = match raw.category {
                FineCategory::True => BinaryLabel::NonMisinformation,
                _ => BinaryLabel::Misinformation,
            };
            if raw.binary != expected {
                return Err(VerdictError::CategoryLabelMismatch {
                    category: raw.category,
                    expected,
                });
            }
        }
        Ok(FinalVerdict {
            category: raw.category,
            binary: raw.binary,
            used_external: raw.used_external,
            fell_back_to_direct: raw.fell_back_to_direct,
            direct: raw.direct,
            evidence_text: raw.evidence_text,
            evidence_visual: raw.evidence_visual,
            refined_rationale: raw.refined_rationale,
            provenance: raw.provenance,
        })
    }
}

impl FinalVerdict {
    /// Build a verdict from a refined-stage category. The binary label and
    /// fallback flag are derived, so the result always satisfies the verdict
    /// invariants.
    pub fn refined(
        category: FineCategory,
        direct: DirectResult,
        evidence_text: Vec<EvidenceTriplet>,
        evidence_visual: VisualEvidence,
        refined_rationale: Option<String>,
        provenance: Provenance,
    ) -> FinalVerdict {
        let binary = map_category(category, &direct);
        FinalVerdict {
            category,
            binary,
            used_external: true,
            fell_back_to_direct: category == FineCategory::Unverified,
            direct,
            evidence_text,
            evidence_visual,
            refined_rationale,
            provenance,
        }
    }

    /// Wrap a direct prediction when gating decided no external knowledge is
    /// needed. Category is `unverified` with the direct-only provenance flag.
    pub fn direct_only(direct: DirectResult, mut provenance: Provenance) -> FinalVerdict {
        provenance.direct_only = true;
        FinalVerdict {
            category: FineCategory::Unverified,
            binary: direct.prediction,
            used_external: false,
            fell_back_to_direct: true,
            direct,
            evidence_text: Vec::new(),
            evidence_visual: VisualEvidence::empty(),
            refined_rationale: None,
            provenance,
        }
    }

    pub fn category(&self) -> FineCategory {
        self.category
    }

    pub fn binary(&self) -> BinaryLabel {
        self.binary
    }

    pub fn used_external(&self) -> bool {
        self.used_external
    }

    pub fn fell_back_to_direct(&self) -> bool {
        self.fell_back_to_direct
    }

    pub fn direct(&self) -> &DirectResult {
        &self.direct
    }

    pub fn evidence_text(&self) -> &[EvidenceTriplet] {
        &self.evidence_text
    }

    pub fn evidence_visual(&self) -> &VisualEvidence {
        &self.evidence_visual
    }

    pub fn refined_rationale(&self) -> Option<&str> {
        self.refined_rationale.as_deref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

/// Resolve a fine category to the binary label.
///
/// Category 1 is real news; categories 2–5 are kinds of misinformation;
/// category 6 (unverified) retains the initial-stage prediction. Total over
/// all inputs.
pub fn map_category(category: FineCategory, direct: &DirectResult) -> BinaryLabel {
    match category {
        FineCategory::True => BinaryLabel::NonMisinformation,
        FineCategory::Satire
        | FineCategory::MisleadingContent
        | FineCategory::FalseConnection
        | FineCategory::ManipulatedContent => BinaryLabel::Misinformation,
        FineCategory::Unverified => direct.prediction,
    }
}
