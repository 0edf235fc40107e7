//! Greedy oracle construction: extractive ground-truth labels built by
//! iteratively selecting the sentence that most improves the ROUGE
//! objective against the gold summary.
//!
//! The objective is the mean of ROUGE-1 F and ROUGE-2 F over the selected
//! sentences joined in document order. Selection stops at the budget `m`
//! or as soon as no sentence strictly improves the objective, whichever
//! comes first. Ties always break toward the lowest sentence index, so the
//! construction is fully deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusEntry;
use crate::rouge::{rouge_l, rouge_n, RougeTriple};
use crate::text::{tokenize, Document, TokenConfig};

/// An extractive summary: selected sentence ordinals (in selection order),
/// their texts, and the ROUGE triple of the document-order join against
/// the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractiveSummary {
    pub doc_id: String,
    pub indices: Vec<usize>,
    pub texts: Vec<String>,
    pub score: RougeTriple,
}

impl ExtractiveSummary {
    /// Selected sentence indices in document order.
    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut sorted = self.indices.clone();
        sorted.sort_unstable();
        sorted
    }

    /// Selected sentence texts joined in document order.
    pub fn joined_text(&self, doc: &Document) -> String {
        self.sorted_indices()
            .iter()
            .map(|&i| doc.sentences[i].text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("document {id:?} has no sentences")]
    EmptyDocument { id: String },
    #[error("extraction budget must be at least 1")]
    ZeroBudget,
    #[error("document {id:?} could not be segmented: {source}")]
    Segmentation {
        id: String,
        #[source]
        source: crate::text::TextError,
    },
}

/// Greedily select up to `m` sentences from `doc` maximizing the mean of
/// ROUGE-1 F and ROUGE-2 F against `reference`.
pub fn greedy_oracle(
    doc: &Document,
    reference: &str,
    m: usize,
    config: &TokenConfig,
) -> Result<ExtractiveSummary, OracleError> {
    if m == 0 {
        return Err(OracleError::ZeroBudget);
    }
    if doc.sentences.is_empty() {
        return Err(OracleError::EmptyDocument { id: doc.id.clone() });
    }

    let sentence_tokens: Vec<Vec<String>> = doc
        .sentences
        .iter()
        .map(|s| tokenize(&s.text, config))
        .collect();
    let ref_tokens = tokenize(reference, config);

    let mut chosen: Vec<usize> = Vec::new();
    let mut current = 0.0f64;

    while chosen.len() < m {
        let mut best: Option<(usize, f64)> = None;
        for idx in 0..doc.sentences.len() {
            if chosen.contains(&idx) {
                continue;
            }
            let value = objective(&sentence_tokens, &chosen, Some(idx), &ref_tokens);
            // Strict > on both comparisons keeps the lowest index on ties.
            if value > current && best.is_none_or(|(_, b)| value > b) {
                best = Some((idx, value));
            }
        }
        match best {
            Some((idx, value)) => {
                chosen.push(idx);
                current = value;
            }
            None => break,
        }
    }

    let texts: Vec<String> = chosen
        .iter()
        .map(|&i| doc.sentences[i].text.clone())
        .collect();
    let score = final_score(&sentence_tokens, &chosen, &ref_tokens);
    Ok(ExtractiveSummary {
        doc_id: doc.id.clone(),
        indices: chosen,
        texts,
        score,
    })
}

/// Mean of ROUGE-1 F and ROUGE-2 F for `chosen` plus an optional extra
/// sentence, joined in document order. Joining sentence texts with spaces
/// and tokenizing is equivalent to concatenating per-sentence token lists,
/// which is what this does.
fn objective(
    sentence_tokens: &[Vec<String>],
    chosen: &[usize],
    extra: Option<usize>,
    ref_tokens: &[String],
) -> f64 {
    let tokens = gather_tokens(sentence_tokens, chosen, extra);
    let r1 = rouge_n(&tokens, ref_tokens, 1).f1;
    let r2 = rouge_n(&tokens, ref_tokens, 2).f1;
    (r1 + r2) / 2.0
}

fn gather_tokens(
    sentence_tokens: &[Vec<String>],
    chosen: &[usize],
    extra: Option<usize>,
) -> Vec<String> {
    let mut members: Vec<usize> = chosen.to_vec();
    if let Some(idx) = extra {
        members.push(idx);
    }
    members.sort_unstable();
    members
        .iter()
        .flat_map(|&i| sentence_tokens[i].iter().cloned())
        .collect()
}

fn final_score(
    sentence_tokens: &[Vec<String>],
    chosen: &[usize],
    ref_tokens: &[String],
) -> RougeTriple {
    let tokens = gather_tokens(sentence_tokens, chosen, None);
    RougeTriple {
        r1: rouge_n(&tokens, ref_tokens, 1),
        r2: rouge_n(&tokens, ref_tokens, 2),
        rl: rouge_l(&tokens, ref_tokens),
    }
}

/// Oracle JSONL record as written by the CLI `oracle` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub doc_id: String,
    pub indices: Vec<usize>,
    pub texts: Vec<String>,
    pub r1_f1: f64,
    pub r2_f1: f64,
    pub rl_f1: f64,
    pub sentence_count: usize,
}

impl OracleRecord {
    pub fn new(summary: &ExtractiveSummary, sentence_count: usize) -> Self {
        Self {
            doc_id: summary.doc_id.clone(),
            indices: summary.indices.clone(),
            texts: summary.texts.clone(),
            r1_f1: summary.score.r1.f1,
            r2_f1: summary.score.r2.f1,
            rl_f1: summary.score.rl.f1,
            sentence_count,
        }
    }
}

/// A per-document failure inside a batch oracle run.
#[derive(Debug)]
pub struct OracleFailure {
    pub doc_id: String,
    pub error: OracleError,
}

/// Run [`greedy_oracle`] over a whole corpus with one budget. Failures are
/// collected per document and never abort the batch; output order follows
/// the corpus.
pub fn oracle_corpus(
    corpus: &[CorpusEntry],
    m: usize,
    config: &TokenConfig,
) -> (Vec<(ExtractiveSummary, usize)>, Vec<OracleFailure>) {
    let mut summaries = Vec::with_capacity(corpus.len());
    let mut failures = Vec::new();
    for entry in corpus {
        let doc = match entry.to_document() {
            Ok(doc) => doc,
            Err(source) => {
                failures.push(OracleFailure {
                    doc_id: entry.id.clone(),
                    error: OracleError::Segmentation {
                        id: entry.id.clone(),
                        source,
                    },
                });
                continue;
            }
        };
        match greedy_oracle(&doc, &entry.summary, m, config) {
            Ok(summary) => summaries.push((summary, doc.sentence_count())),
            Err(error) => failures.push(OracleFailure {
                doc_id: entry.id.clone(),
                error,
            }),
        }
    }
    (summaries, failures)
}
