//! Parsing of model outputs and alignment of claimed extractive sentences
//! back to source sentence indices.
//!
//! Parsing is strict-JSON first with a salvage fallback (first balanced
//! JSON object in the text, then line splitting for extractive output).
//! Alignment is greedy best-match under a normalized edit-distance
//! similarity; unmatched claims are kept, they are the raw material of the
//! faithfulness analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::Schema;
use crate::text::Document;

/// Which parsing path produced an output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    StrictJson,
    Salvage,
}

/// A parsed model response. Exactly one of `summary_sentences`,
/// `summary_text`, or `scores` is populated, depending on the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedOutput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_sentences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, i64>>,
    pub parse_mode: ParseMode,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("output is not parseable as {schema:?}: {message}")]
    Unparseable { schema: Schema, message: String },
}

/// Parse a raw model response according to the schema's output contract.
pub fn parse_output(raw: &str, schema: Schema) -> Result<ParsedOutput, ParseError> {
    let trimmed = raw.trim();
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(trimmed) {
        if let Some(parsed) = interpret(&value, schema, ParseMode::StrictJson) {
            return Ok(parsed);
        }
    }
    // Salvage path 1: first balanced JSON object embedded in the text.
    for candidate in balanced_objects(trimmed) {
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) {
            if let Some(parsed) = interpret(&value, schema, ParseMode::Salvage) {
                return Ok(parsed);
            }
        }
    }
    // Salvage path 2: plain-text fallbacks; the evaluator has none.
    match schema {
        Schema::Abstractive | Schema::ExtractAbstract => Ok(ParsedOutput {
            summary_sentences: None,
            summary_text: Some(trimmed.to_string()),
            reason: None,
            scores: None,
            parse_mode: ParseMode::Salvage,
        }),
        Schema::Evaluator => Err(ParseError::Unparseable {
            schema,
            message: "no JSON object with a scores map found".to_string(),
        }),
        _ => {
            let lines: Vec<String> = trimmed
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            if lines.is_empty() {
                return Err(ParseError::Unparseable {
                    schema,
                    message: "empty output".to_string(),
                });
            }
            Ok(ParsedOutput {
                summary_sentences: Some(lines),
                summary_text: None,
                reason: None,
                scores: None,
                parse_mode: ParseMode::Salvage,
            })
        }
    }
}

/// Extract every balanced `{...}` substring, respecting JSON string
/// escapes, in order of appearance.
fn balanced_objects(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    if let Some(s) = start.take() {
                        found.push(&text[s..=i]);
                    }
                }
            }
            _ => {}
        }
    }
    found
}

fn interpret(value: &serde_json::Value, schema: Schema, mode: ParseMode) -> Option<ParsedOutput> {
    let obj = value.as_object()?;
    match schema {
        Schema::Extractive | Schema::InContext | Schema::Explanation => {
            let sentences: Vec<String> = obj
                .get("summary")?
                .as_array()?
                .iter()
                .map(|v| v.as_str().map(String::from))
                .collect::<Option<_>>()?;
            let reason = obj.get("reason").and_then(|v| v.as_str()).map(String::from);
            Some(ParsedOutput {
                summary_sentences: Some(sentences),
                summary_text: None,
                reason,
                scores: None,
                parse_mode: mode,
            })
        }
        Schema::Abstractive | Schema::ExtractAbstract => {
            let text = obj.get("summary")?.as_str()?.to_string();
            Some(ParsedOutput {
                summary_sentences: None,
                summary_text: Some(text),
                reason: None,
                scores: None,
                parse_mode: mode,
            })
        }
        Schema::Evaluator => {
            let scores = obj.get("scores")?.as_object()?;
            let map: BTreeMap<String, i64> = scores
                .iter()
                .map(|(k, v)| v.as_i64().map(|n| (k.clone(), n)))
                .collect::<Option<_>>()?;
            Some(ParsedOutput {
                summary_sentences: None,
                summary_text: None,
                reason: None,
                scores: Some(map),
                parse_mode: mode,
            })
        }
    }
}

/// One claimed sentence matched to a source sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedClaim {
    pub claimed: String,
    pub source_index: usize,
    pub similarity: f64,
}

/// Result of aligning claimed sentences against a document. `copy_rate` is
/// the fraction of claimed sentences matched at similarity exactly 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub matched: Vec<MatchedClaim>,
    pub unmatched: Vec<String>,
    pub copy_rate: f64,
}

impl AlignmentResult {
    /// Matched source indices in document order.
    pub fn matched_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.matched.iter().map(|m| m.source_index).collect();
        idx.sort_unstable();
        idx
    }
}

/// Normalize for similarity: lowercase, collapse whitespace runs to single
/// spaces, strip leading/trailing punctuation.
fn normalize(s: &str) -> Vec<char> {
    let lowered = s.to_lowercase();
    let collapsed: String = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let stripped = collapsed.trim_matches(|c: char| !c.is_alphanumeric() && !c.is_whitespace());
    stripped.chars().collect()
}

/// Similarity in `[0, 1]`: one minus the normalized Levenshtein distance
/// of the normalized strings. Two empty strings are perfectly similar.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    let na = normalize(a);
    let nb = normalize(b);
    let longest = na.len().max(nb.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&na, &nb) as f64 / longest as f64
}

// Single-row Levenshtein over chars.
fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let cost = if ca == cb { diag } else { diag + 1 };
            diag = row[j + 1];
            row[j + 1] = cost.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

/// Default similarity threshold for accepting a claim as a source match.
pub const DEFAULT_ALIGN_THRESHOLD: f64 = 0.8;

/// Greedily align claimed sentences to unused source sentences: each claim
/// (in order) takes the most similar free sentence at or above `threshold`,
/// ties breaking to the lowest index. Below-threshold claims land in
/// `unmatched`.
pub fn align_to_document(claimed: &[String], doc: &Document, threshold: f64) -> AlignmentResult {
    assert!(
        threshold > 0.0 && threshold <= 1.0,
        "threshold must be in (0, 1]"
    );
    let mut used = vec![false; doc.sentences.len()];
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    let mut exact = 0usize;

    for claim in claimed {
        let mut best: Option<(usize, f64)> = None;
        for (idx, sentence) in doc.sentences.iter().enumerate() {
            if used[idx] {
                continue;
            }
            let sim = normalized_similarity(claim, &sentence.text);
            if sim >= threshold && best.is_none_or(|(_, b)| sim > b) {
                best = Some((idx, sim));
            }
        }
        match best {
            Some((idx, sim)) => {
                used[idx] = true;
                if sim == 1.0 {
                    exact += 1;
                }
                matched.push(MatchedClaim {
                    claimed: claim.clone(),
                    source_index: idx,
                    similarity: sim,
                });
            }
            None => unmatched.push(claim.clone()),
        }
    }

    let copy_rate = if claimed.is_empty() {
        0.0
    } else {
        exact as f64 / claimed.len() as f64
    };
    AlignmentResult {
        matched,
        unmatched,
        copy_rate,
    }
}
