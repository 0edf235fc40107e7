//! JSONL corpus ingestion, dataset defaults, and seeded sampling.
//!
//! The corpus format is one JSON object per line with `id`, `document`,
//! `summary` and an optional `sentences` list carrying dataset-official
//! sentence boundaries. The toolkit never bundles the public benchmark
//! datasets themselves; converters produce this format (see the README).
//!
//! Sampling is pinned to the sampler-v1 algorithm (SplitMix64 plus a
//! partial Fisher-Yates pass) so the same `(corpus, n, seed)` always
//! selects the same ids on every platform.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::SplitMix64;
use crate::text::{Document, TextError};

/// Version tag of the sampling algorithm; bump only with a new algorithm.
pub const SAMPLER_VERSION: &str = "sampler-v1";

/// One document/summary pair as stored in a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub document: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<String>>,
}

impl CorpusEntry {
    /// Materialize the entry as a [`Document`], honoring pre-segmented
    /// sentences when present.
    pub fn to_document(&self) -> Result<Document, TextError> {
        match &self.sentences {
            Some(provided) => Document::with_sentences(&self.id, &self.document, provided),
            None => Ok(Document::new(&self.id, &self.document)),
        }
    }
}

/// Per-dataset extraction defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub num_extract: usize,
    pub notes: String,
}

/// Built-in dataset configurations: extraction budgets per dataset shape.
pub fn builtin_datasets() -> Vec<DatasetConfig> {
    let mk = |name: &str, num_extract: usize, notes: &str| DatasetConfig {
        name: name.to_string(),
        num_extract,
        notes: notes.to_string(),
    };
    vec![
        mk("cnn_dm", 3, "news articles with highlight summaries"),
        mk("xsum", 2, "one-sentence news summaries"),
        mk("reddit", 2, "social media posts, highly abstractive"),
        mk("pubmed", 6, "paper introductions summarized by abstracts"),
    ]
}

/// Look up a built-in dataset config by name.
pub fn dataset_config(name: &str) -> Option<DatasetConfig> {
    builtin_datasets().into_iter().find(|d| d.name == name)
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("corpus line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("sample size {n} exceeds corpus size {size}")]
    SampleTooLarge { n: usize, size: usize },
    #[error("corpus of {size} entries is too small for a dev split of {dev}")]
    TooSmallForDevSplit { size: usize, dev: usize },
}

/// Load a JSONL corpus. Blank lines are skipped; any malformed line is an
/// error naming its 1-based line number; duplicate ids are rejected.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, CorpusError> {
    let raw = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line_num = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry = serde_json::from_str(line).map_err(|e| CorpusError::Schema {
            line: line_num,
            message: e.to_string(),
        })?;
        validate_entry(&entry, line_num)?;
        if !seen.insert(entry.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_num,
                id: entry.id,
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

fn validate_entry(entry: &CorpusEntry, line: usize) -> Result<(), CorpusError> {
    if entry.id.is_empty() {
        return Err(CorpusError::Schema {
            line,
            message: "empty id".to_string(),
        });
    }
    if entry.document.trim().is_empty() {
        return Err(CorpusError::Schema {
            line,
            message: "empty document".to_string(),
        });
    }
    if entry.summary.trim().is_empty() {
        return Err(CorpusError::Schema {
            line,
            message: "empty summary".to_string(),
        });
    }
    if let Some(sentences) = &entry.sentences {
        let provided: String = sentences.iter().flat_map(|s| alnum_chars(s)).collect();
        let document: String = alnum_chars(&entry.document).collect();
        if provided != document {
            return Err(CorpusError::Schema {
                line,
                message: "pre-segmented sentences do not cover the document's alphanumeric content"
                    .to_string(),
            });
        }
    }
    Ok(())
}

fn alnum_chars(s: &str) -> impl Iterator<Item = char> + '_ {
    s.chars().filter(|c| c.is_alphanumeric())
}

/// Serialize entries as JSONL with the canonical key order
/// (id, document, summary, sentences).
pub fn save_jsonl(path: impl AsRef<Path>, entries: &[CorpusEntry]) -> Result<(), CorpusError> {
    let mut out = fs::File::create(path)?;
    for entry in entries {
        let line = serde_json::to_string(entry).expect("corpus entry serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Uniform sample of `n` entries without replacement, deterministic in
/// `(corpus, n, seed)`. Output preserves original corpus order.
///
/// Sampler v1: a partial Fisher-Yates shuffle over the index vector driven
/// by SplitMix64(seed); the first `n` slots are the selection.
pub fn sample(
    corpus: &[CorpusEntry],
    n: usize,
    seed: u64,
) -> Result<Vec<CorpusEntry>, CorpusError> {
    if n > corpus.len() {
        return Err(CorpusError::SampleTooLarge {
            n,
            size: corpus.len(),
        });
    }
    let selected = sample_indices(corpus.len(), n, seed);
    Ok(selected.into_iter().map(|i| corpus[i].clone()).collect())
}

fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..len).collect();
    let mut rng = SplitMix64::new(seed);
    for i in 0..n {
        let j = i + rng.next_below((len - i) as u64) as usize;
        indices.swap(i, j);
    }
    let mut selected = indices[..n].to_vec();
    selected.sort_unstable();
    selected
}

/// Dev-set size used by [`dev_split`].
pub const DEV_SPLIT_SIZE: usize = 50;

/// Split off a 50-entry dev set; the remainder keeps original order and is
/// disjoint from the dev set.
pub fn dev_split(
    corpus: &[CorpusEntry],
    seed: u64,
) -> Result<(Vec<CorpusEntry>, Vec<CorpusEntry>), CorpusError> {
    if corpus.len() <= DEV_SPLIT_SIZE {
        return Err(CorpusError::TooSmallForDevSplit {
            size: corpus.len(),
            dev: DEV_SPLIT_SIZE,
        });
    }
    let selected: HashSet<usize> = sample_indices(corpus.len(), DEV_SPLIT_SIZE, seed)
        .into_iter()
        .collect();
    let mut dev = Vec::with_capacity(DEV_SPLIT_SIZE);
    let mut rest = Vec::with_capacity(corpus.len() - DEV_SPLIT_SIZE);
    for (i, entry) in corpus.iter().enumerate() {
        if selected.contains(&i) {
            dev.push(entry.clone());
        } else {
            rest.push(entry.clone());
        }
    }
    Ok((dev, rest))
}

/// Content digest of a corpus (sha256 over its canonical JSONL form).
pub fn corpus_digest(entries: &[CorpusEntry]) -> String {
    let mut hasher = Sha256::new();
    for entry in entries {
        hasher.update(serde_json::to_string(entry).expect("corpus entry serializes"));
        hasher.update(b"\n");
    }
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
