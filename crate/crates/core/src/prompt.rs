//! Construction of the six prompt schemas used by the experiment families.
//!
//! Template text is pinned byte-for-byte, including the source material's
//! typos ("summarize" for "summarizer" in the abstractive system line and
//! "Docuemnt" in the extract-abstract template); `Templates { corrected:
//! true }` switches to the corrected wording. Rendered prompts are frozen
//! as golden files under `goldens/prompts/<version>/`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::ExtractiveSummary;
use crate::text::Document;

/// Version tag for the template set; part of every run manifest.
pub const TEMPLATES_VERSION: &str = "v1";

/// The six prompt schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Extractive,
    Abstractive,
    InContext,
    Explanation,
    ExtractAbstract,
    Evaluator,
}

impl Schema {
    pub fn as_str(&self) -> &'static str {
        match self {
            Schema::Extractive => "extractive",
            Schema::Abstractive => "abstractive",
            Schema::InContext => "in_context",
            Schema::Explanation => "explanation",
            Schema::ExtractAbstract => "extract_abstract",
            Schema::Evaluator => "evaluator",
        }
    }
}

/// A system/user message pair ready for the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub schema: Schema,
}

/// One exemplar for in-context prompts; `reason` is present only for the
/// explanation schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub document: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// The output-contract sentence appended at each template's
/// `[Format Instruction]` slot. The wording is pinned per schema so model
/// outputs stay machine-parseable and runs stay cacheable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatInstruction {
    pub text: String,
}

impl FormatInstruction {
    pub fn extractive() -> Self {
        Self {
            text: "Respond with a single JSON object of the form {\"summary\": [\"sentence 1\", \"sentence 2\", ...]}, where each element is a sentence copied verbatim from the document. Output only the JSON object.".to_string(),
        }
    }

    pub fn extractive_with_reason() -> Self {
        Self {
            text: "Respond with a single JSON object of the form {\"summary\": [\"sentence 1\", \"sentence 2\", ...], \"reason\": \"why these sentences were selected\"}, where each summary element is a sentence copied verbatim from the document. Output only the JSON object.".to_string(),
        }
    }

    pub fn abstractive() -> Self {
        Self {
            text: "Respond with a single JSON object of the form {\"summary\": \"summary text\"}. Output only the JSON object.".to_string(),
        }
    }

    pub fn evaluator() -> Self {
        Self {
            text: "Respond with a single JSON object of the form {\"scores\": {\"coherence\": 1-5, \"consistency\": 1-5, \"fluency\": 1-5, \"efficiency\": 1-5}}, where each score is an integer from 1 to 5. Output only the JSON object.".to_string(),
        }
    }
}

pub mod templates {
    //! The raw template text. Bracketed names are substitution slots; the
    //! bare `m` before "sentences" is replaced by the extraction budget.

    pub const SYSTEM_EXTRACTIVE: &str =
        "You are an extractive summarizer that follows the output pattern.";
    pub const SYSTEM_ABSTRACTIVE: &str =
        "You are an abstractive summarize that follows the output pattern.";
    pub const SYSTEM_ABSTRACTIVE_CORRECTED: &str =
        "You are an abstractive summarizer that follows the output pattern.";
    pub const SYSTEM_EXTRACT_ABSTRACT: &str =
        "You are an abstractive summarizer that follows the output pattern.";
    pub const SYSTEM_EVALUATOR: &str = "You are a summary evaluator that follows the output pattern. You give scores for the summaries based on the comprehensive consideration following criteria:\n(1) Coherence: \u{201C}the collective quality of all sentences\u{201D};\n(2) Consistency: \u{201C}the factual alignment between the summary and the reference\u{201D};\n(3) Fluency: \u{201C} the quality of individual sentences\u{201D};\n(4) Efficiency: \u{201C}If the summary is concise\u{201D}";

    pub const USER_EXTRACTIVE: &str = "Please extract sentences as the summary. The summary should contain m sentences. Document: [Test Document] [Format Instruction]";
    pub const USER_ABSTRACTIVE: &str =
        "Please write a summary for the document. Document: [Test Document] [Format Instruction]";
    pub const USER_IN_CONTEXT: &str = "The following examples are successful extractive summarization instances: [n Document-Summary Pairs]. Please summarize the following document. Document: [Test Document]. The summary should contain m sentences. [Format Instruction]";
    pub const USER_EXPLANATION: &str = "The following examples are successful extractive summarization instances: [n Document-Summary-Reason Triads]. Please summarize the following document and give the reason. Document: [Test Document]. The summary should contain m sentences. [Format Instruction]";
    pub const USER_EXTRACT_ABSTRACT: &str = "Please revise the extracted summary based on the document. The revised summary should include the information in the extracted summary. Document: [Test Docuemnt] Extractive Summary: [Extractive Summary] [Format Instruction]";
    pub const USER_EXTRACT_ABSTRACT_CORRECTED: &str = "Please revise the extracted summary based on the document. The revised summary should include the information in the extracted summary. Document: [Test Document] Extractive Summary: [Extractive Summary] [Format Instruction]";
    pub const USER_EVALUATOR: &str = "Please evaluate the summary based on the reference summary.Reference:[Reference Summary] Summary:[Predicted Summary][Format Instruction]";
}

/// Template selector. The default reproduces the source templates
/// verbatim; `corrected: true` fixes the known typos.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Templates {
    pub corrected: bool,
}

impl Templates {
    fn system_extractive(&self) -> &'static str {
        templates::SYSTEM_EXTRACTIVE
    }

    fn system_abstractive(&self) -> &'static str {
        if self.corrected {
            templates::SYSTEM_ABSTRACTIVE_CORRECTED
        } else {
            templates::SYSTEM_ABSTRACTIVE
        }
    }

    fn system_extract_abstract(&self) -> &'static str {
        // Identical under both modes: the source already reads
        // "summarizer" in this row.
        templates::SYSTEM_EXTRACT_ABSTRACT
    }

    fn system_evaluator(&self) -> &'static str {
        templates::SYSTEM_EVALUATOR
    }
}

/// Maximum in-context example count accepted by the builders.
pub const MAX_FEW_SHOT: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("document {id:?} has no sentences; refusing to build a prompt")]
    EmptyDocument { id: String },
    #[error("extraction budget must be at least 1")]
    ZeroBudget,
    #[error("{got} in-context examples exceed the maximum of {max}")]
    TooManyExamples { got: usize, max: usize },
    #[error("explanation schema requires at least one example")]
    NoExamples,
    #[error("in-context example {index} carries a reason; use the explanation schema")]
    UnexpectedReason { index: usize },
    #[error("explanation example {index} is missing its reason")]
    MissingReason { index: usize },
    #[error("extractive summary belongs to document {summary_doc:?}, not {doc:?}")]
    DocumentMismatch { summary_doc: String, doc: String },
    #[error("extractive summary for {id:?} selects no sentences")]
    EmptyExtraction { id: String },
    #[error("evaluator inputs must be non-empty")]
    EmptyEvaluatorInput,
}

fn require_document(doc: &Document) -> Result<(), PromptError> {
    if doc.sentences.is_empty() {
        Err(PromptError::EmptyDocument { id: doc.id.clone() })
    } else {
        Ok(())
    }
}

fn render_extractive_user(m: &str, doc: &str, fi: &str) -> String {
    format!(
        "Please extract sentences as the summary. The summary should contain {m} sentences. Document: {doc} {fi}"
    )
}

fn render_abstractive_user(doc: &str, fi: &str) -> String {
    format!("Please write a summary for the document. Document: {doc} {fi}")
}

fn render_in_context_user(pairs: &str, doc: &str, m: &str, fi: &str) -> String {
    format!(
        "The following examples are successful extractive summarization instances: {pairs}. Please summarize the following document. Document: {doc}. The summary should contain {m} sentences. {fi}"
    )
}

fn render_explanation_user(triads: &str, doc: &str, m: &str, fi: &str) -> String {
    format!(
        "The following examples are successful extractive summarization instances: {triads}. Please summarize the following document and give the reason. Document: {doc}. The summary should contain {m} sentences. {fi}"
    )
}

fn render_extract_abstract_user(doc: &str, extractive: &str, fi: &str) -> String {
    format!(
        "Please revise the extracted summary based on the document. The revised summary should include the information in the extracted summary. Document: {doc} Extractive Summary: {extractive} {fi}"
    )
}

fn render_evaluator_user(reference: &str, prediction: &str, fi: &str) -> String {
    format!(
        "Please evaluate the summary based on the reference summary.Reference:{reference} Summary:{prediction}{fi}"
    )
}

/// Zero-shot extractive prompt.
pub fn build_extractive(
    doc: &Document,
    m: usize,
    fi: &FormatInstruction,
    templates: &Templates,
) -> Result<PromptBundle, PromptError> {
    require_document(doc)?;
    if m == 0 {
        return Err(PromptError::ZeroBudget);
    }
    Ok(PromptBundle {
        system: templates.system_extractive().to_string(),
        user: render_extractive_user(&m.to_string(), &doc.text, &fi.text),
        schema: Schema::Extractive,
    })
}

/// Zero-shot abstractive prompt.
pub fn build_abstractive(
    doc: &Document,
    fi: &FormatInstruction,
    templates: &Templates,
) -> Result<PromptBundle, PromptError> {
    require_document(doc)?;
    Ok(PromptBundle {
        system: templates.system_abstractive().to_string(),
        user: render_abstractive_user(&doc.text, &fi.text),
        schema: Schema::Abstractive,
    })
}

fn pair_block(example: &FewShotExample) -> String {
    format!(
        "Document: {}\nSummary: {}",
        example.document, example.summary
    )
}

fn triad_block(example: &FewShotExample, reason: &str) -> String {
    format!(
        "Document: {}\nSummary: {}\nReason: {}",
        example.document, example.summary, reason
    )
}

/// In-context prompt with `k = examples.len()` document-summary pairs.
/// With zero examples this degenerates byte-for-byte to the zero-shot
/// extractive prompt.
pub fn build_in_context(
    doc: &Document,
    m: usize,
    examples: &[FewShotExample],
    fi: &FormatInstruction,
    templates: &Templates,
) -> Result<PromptBundle, PromptError> {
    require_document(doc)?;
    if m == 0 {
        return Err(PromptError::ZeroBudget);
    }
    if examples.is_empty() {
        return build_extractive(doc, m, fi, templates);
    }
    if examples.len() > MAX_FEW_SHOT {
        return Err(PromptError::TooManyExamples {
            got: examples.len(),
            max: MAX_FEW_SHOT,
        });
    }
    if let Some(index) = examples.iter().position(|e| e.reason.is_some()) {
        return Err(PromptError::UnexpectedReason { index });
    }
    let pairs = examples
        .iter()
        .map(pair_block)
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(PromptBundle {
        system: templates.system_extractive().to_string(),
        user: render_in_context_user(&pairs, &doc.text, &m.to_string(), &fi.text),
        schema: Schema::InContext,
    })
}

/// Explanation prompt: in-context learning with document-summary-reason
/// triads. Every example must carry a reason.
pub fn build_explanation(
    doc: &Document,
    m: usize,
    examples: &[FewShotExample],
    fi: &FormatInstruction,
    templates: &Templates,
) -> Result<PromptBundle, PromptError> {
    require_document(doc)?;
    if m == 0 {
        return Err(PromptError::ZeroBudget);
    }
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    if examples.len() > MAX_FEW_SHOT {
        return Err(PromptError::TooManyExamples {
            got: examples.len(),
            max: MAX_FEW_SHOT,
        });
    }
    let mut triads = Vec::with_capacity(examples.len());
    for (index, example) in examples.iter().enumerate() {
        match &example.reason {
            Some(reason) => triads.push(triad_block(example, reason)),
            None => return Err(PromptError::MissingReason { index }),
        }
    }
    Ok(PromptBundle {
        system: templates.system_extractive().to_string(),
        user: render_explanation_user(&triads.join("\n\n"), &doc.text, &m.to_string(), &fi.text),
        schema: Schema::Explanation,
    })
}

/// Stage-two prompt of the extract-then-generate pipeline: revise an
/// extractive summary into an abstractive one.
pub fn build_extract_abstract(
    doc: &Document,
    ext: &ExtractiveSummary,
    fi: &FormatInstruction,
    templates: &Templates,
) -> Result<PromptBundle, PromptError> {
    require_document(doc)?;
    if ext.doc_id != doc.id {
        return Err(PromptError::DocumentMismatch {
            summary_doc: ext.doc_id.clone(),
            doc: doc.id.clone(),
        });
    }
    if ext.indices.is_empty() {
        return Err(PromptError::EmptyExtraction { id: doc.id.clone() });
    }
    let extractive = ext.joined_text(doc);
    Ok(PromptBundle {
        system: templates.system_extract_abstract().to_string(),
        user: render_extract_abstract_user(&doc.text, &extractive, &fi.text),
        schema: Schema::ExtractAbstract,
    })
}

/// Judge prompt scoring a predicted summary against the reference.
pub fn build_evaluator(
    reference: &str,
    prediction: &str,
    fi: &FormatInstruction,
    templates: &Templates,
) -> Result<PromptBundle, PromptError> {
    if reference.trim().is_empty() || prediction.trim().is_empty() {
        return Err(PromptError::EmptyEvaluatorInput);
    }
    Ok(PromptBundle {
        system: templates.system_evaluator().to_string(),
        user: render_evaluator_user(reference, prediction, &fi.text),
        schema: Schema::Evaluator,
    })
}

/// The slot markers that must never survive rendering.
pub const SLOT_MARKERS: &[&str] = &[
    "[Test Document]",
    "[Test Docuemnt]",
    "[Format Instruction]",
    "[n Document-Summary Pairs]",
    "[n Document-Summary-Reason Triads]",
    "[Extractive Summary]",
    "[Reference Summary]",
    "[Predicted Summary]",
];

/// Scan a rendered prompt for leftover slot markers.
pub fn residual_slots(rendered: &str) -> Vec<&'static str> {
    SLOT_MARKERS
        .iter()
        .copied()
        .filter(|m| rendered.contains(m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::templates::*;
    use super::*;
    use crate::rouge::RougeTriple;

    fn doc() -> Document {
        Document::new("doc-1", "Alpha beta gamma. Delta epsilon zeta.")
    }

    fn fi() -> FormatInstruction {
        FormatInstruction::extractive()
    }

    #[test]
    fn renderers_match_template_constants() {
        assert_eq!(
            render_extractive_user("m", "[Test Document]", "[Format Instruction]"),
            USER_EXTRACTIVE
        );
        assert_eq!(
            render_abstractive_user("[Test Document]", "[Format Instruction]"),
            USER_ABSTRACTIVE
        );
        assert_eq!(
            render_in_context_user(
                "[n Document-Summary Pairs]",
                "[Test Document]",
                "m",
                "[Format Instruction]"
            ),
            USER_IN_CONTEXT
        );
        assert_eq!(
            render_explanation_user(
                "[n Document-Summary-Reason Triads]",
                "[Test Document]",
                "m",
                "[Format Instruction]"
            ),
            USER_EXPLANATION
        );
        assert_eq!(
            render_extract_abstract_user(
                "[Test Document]",
                "[Extractive Summary]",
                "[Format Instruction]"
            ),
            USER_EXTRACT_ABSTRACT_CORRECTED
        );
        assert_eq!(
            render_evaluator_user(
                "[Reference Summary]",
                "[Predicted Summary]",
                "[Format Instruction]"
            ),
            USER_EVALUATOR
        );
    }

    #[test]
    fn template_constants_keep_source_typos() {
        assert!(SYSTEM_ABSTRACTIVE.contains("abstractive summarize that"));
        assert!(USER_EXTRACT_ABSTRACT.contains("[Test Docuemnt]"));
        assert!(SYSTEM_EVALUATOR.contains("\u{201C} the quality of individual sentences\u{201D}"));
        assert!(USER_EVALUATOR.contains("summary.Reference:"));
    }

    #[test]
    fn corrected_mode_fixes_system_typo() {
        let d = doc();
        let faithful =
            build_abstractive(&d, &FormatInstruction::abstractive(), &Templates::default())
                .unwrap();
        let corrected = build_abstractive(
            &d,
            &FormatInstruction::abstractive(),
            &Templates { corrected: true },
        )
        .unwrap();
        assert!(faithful.system.contains("summarize that"));
        assert!(corrected.system.contains("summarizer that"));
        assert_eq!(faithful.user, corrected.user);
    }

    #[test]
    fn extractive_renders_budget_and_document() {
        let d = doc();
        let bundle = build_extractive(&d, 1, &fi(), &Templates::default()).unwrap();
        assert!(bundle.user.contains("contain 1 sentences"));
        assert!(bundle.user.contains(&d.text));
        assert_eq!(bundle.system, SYSTEM_EXTRACTIVE);
        assert!(residual_slots(&bundle.user).is_empty());
        assert!(residual_slots(&bundle.system).is_empty());
    }

    #[test]
    fn in_context_zero_examples_degenerates_byte_exactly() {
        let d = doc();
        let zero = build_in_context(&d, 2, &[], &fi(), &Templates::default()).unwrap();
        let plain = build_extractive(&d, 2, &fi(), &Templates::default()).unwrap();
        assert_eq!(zero, plain);
    }

    #[test]
    fn in_context_serializes_examples_in_order() {
        let d = doc();
        let examples = vec![
            FewShotExample {
                document: "First doc.".into(),
                summary: "First sum.".into(),
                reason: None,
            },
            FewShotExample {
                document: "Second doc.".into(),
                summary: "Second sum.".into(),
                reason: None,
            },
        ];
        let bundle = build_in_context(&d, 2, &examples, &fi(), &Templates::default()).unwrap();
        let first = bundle
            .user
            .find("Document: First doc.\nSummary: First sum.")
            .unwrap();
        let second = bundle
            .user
            .find("Document: Second doc.\nSummary: Second sum.")
            .unwrap();
        assert!(first < second);
        assert!(residual_slots(&bundle.user).is_empty());
    }

    #[test]
    fn in_context_rejects_reasons_and_overflow() {
        let d = doc();
        let with_reason = vec![FewShotExample {
            document: "D.".into(),
            summary: "S.".into(),
            reason: Some("R.".into()),
        }];
        assert_eq!(
            build_in_context(&d, 1, &with_reason, &fi(), &Templates::default()).unwrap_err(),
            PromptError::UnexpectedReason { index: 0 }
        );
        let many: Vec<FewShotExample> = (0..6)
            .map(|i| FewShotExample {
                document: format!("D{i}."),
                summary: format!("S{i}."),
                reason: None,
            })
            .collect();
        assert_eq!(
            build_in_context(&d, 1, &many, &fi(), &Templates::default()).unwrap_err(),
            PromptError::TooManyExamples { got: 6, max: 5 }
        );
    }

    #[test]
    fn explanation_requires_reasons() {
        let d = doc();
        let missing = vec![FewShotExample {
            document: "D.".into(),
            summary: "S.".into(),
            reason: None,
        }];
        assert_eq!(
            build_explanation(&d, 1, &missing, &fi(), &Templates::default()).unwrap_err(),
            PromptError::MissingReason { index: 0 }
        );
        let good = vec![FewShotExample {
            document: "D.".into(),
            summary: "S.".into(),
            reason: Some("Because.".into()),
        }];
        let bundle = build_explanation(
            &d,
            1,
            &good,
            &FormatInstruction::extractive_with_reason(),
            &Templates::default(),
        )
        .unwrap();
        assert!(bundle
            .user
            .contains("Document: D.\nSummary: S.\nReason: Because."));
        assert!(bundle.user.contains("give the reason"));
    }

    #[test]
    fn extract_abstract_checks_ownership_and_content() {
        let d = doc();
        let ext = ExtractiveSummary {
            doc_id: "doc-1".into(),
            indices: vec![1, 0],
            texts: vec!["Delta epsilon zeta.".into(), "Alpha beta gamma.".into()],
            score: RougeTriple::ZERO,
        };
        let bundle = build_extract_abstract(
            &d,
            &ext,
            &FormatInstruction::abstractive(),
            &Templates::default(),
        )
        .unwrap();
        // Joined in document order, not selection order.
        assert!(bundle
            .user
            .contains("Extractive Summary: Alpha beta gamma. Delta epsilon zeta."));
        assert_eq!(bundle.system, SYSTEM_EXTRACT_ABSTRACT);

        let foreign = ExtractiveSummary {
            doc_id: "other".into(),
            ..ext.clone()
        };
        assert!(matches!(
            build_extract_abstract(
                &d,
                &foreign,
                &FormatInstruction::abstractive(),
                &Templates::default()
            ),
            Err(PromptError::DocumentMismatch { .. })
        ));
        let empty = ExtractiveSummary {
            indices: vec![],
            texts: vec![],
            ..ext
        };
        assert!(matches!(
            build_extract_abstract(
                &d,
                &empty,
                &FormatInstruction::abstractive(),
                &Templates::default()
            ),
            Err(PromptError::EmptyExtraction { .. })
        ));
    }

    #[test]
    fn evaluator_embeds_both_slots() {
        let bundle = build_evaluator(
            "the reference",
            "the prediction",
            &FormatInstruction::evaluator(),
            &Templates::default(),
        )
        .unwrap();
        assert!(bundle.user.contains("Reference:the reference"));
        assert!(bundle.user.contains("Summary:the prediction"));
        assert!(bundle.system.contains("(4) Efficiency"));
        // reference == prediction is a valid calibration probe
        assert!(build_evaluator(
            "same",
            "same",
            &FormatInstruction::evaluator(),
            &Templates::default()
        )
        .is_ok());
        assert!(matches!(
            build_evaluator(
                "",
                "x",
                &FormatInstruction::evaluator(),
                &Templates::default()
            ),
            Err(PromptError::EmptyEvaluatorInput)
        ));
    }

    #[test]
    fn distinct_documents_yield_distinct_prompts() {
        let a = Document::new("a", "First document body here.");
        let b = Document::new("b", "Second document body here.");
        let pa = build_extractive(&a, 1, &fi(), &Templates::default()).unwrap();
        let pb = build_extractive(&b, 1, &fi(), &Templates::default()).unwrap();
        assert_ne!(pa.user, pb.user);
    }

    #[test]
    fn empty_document_rejected_before_build() {
        let empty = Document::new("e", "   ");
        assert!(matches!(
            build_abstractive(
                &empty,
                &FormatInstruction::abstractive(),
                &Templates::default()
            ),
            Err(PromptError::EmptyDocument { .. })
        ));
    }
}
