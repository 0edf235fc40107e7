//! Orchestration of the experiment families — extractive (zero-shot and
//! in-context, with or without reasons), abstractive, extract-then-generate
//! — plus judge-based evaluation, with per-document error isolation and
//! reproducible run manifests.
//!
//! For extractive schemas the canonical summary is always the aligned
//! source text joined in document order, never the model's raw strings:
//! that is the faithfulness guarantee of the extractive path. ROUGE is
//! always computed against the corpus gold summary.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{align_to_document, parse_output, AlignmentResult, ParseMode, ParsedOutput};
use crate::client::{cache_key, ChatRequest, ChatResponse, Client, ClientError};
use crate::corpus::{corpus_digest, hex, CorpusEntry};
use crate::oracle::{greedy_oracle, ExtractiveSummary};
use crate::prompt::{
    build_abstractive, build_evaluator, build_explanation, build_extract_abstract,
    build_extractive, build_in_context, FewShotExample, FormatInstruction, PromptBundle, Schema,
    Templates, TEMPLATES_VERSION,
};
use crate::rouge::{score_pair, RougeTriple};
use crate::text::{Document, TokenConfig};

/// Judge scores on the four criteria, 1-5 each; `overall` is their
/// unweighted mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScore {
    pub coherence: i64,
    pub consistency: i64,
    pub fluency: i64,
    pub efficiency: i64,
    pub overall: f64,
}

impl EvalScore {
    /// Build from a parsed scores map, rejecting missing criteria and
    /// out-of-range values (they are flagged, never clamped).
    pub fn from_scores(scores: &std::collections::BTreeMap<String, i64>) -> Result<Self, String> {
        let get = |name: &str| -> Result<i64, String> {
            let v = *scores
                .get(name)
                .ok_or_else(|| format!("missing criterion {name:?}"))?;
            if !(1..=5).contains(&v) {
                return Err(format!("criterion {name:?} value {v} outside 1..=5"));
            }
            Ok(v)
        };
        let coherence = get("coherence")?;
        let consistency = get("consistency")?;
        let fluency = get("fluency")?;
        let efficiency = get("efficiency")?;
        let overall = (coherence + consistency + fluency + efficiency) as f64 / 4.0;
        Ok(Self {
            coherence,
            consistency,
            fluency,
            efficiency,
            overall,
        })
    }
}

/// One document's full experiment trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub doc_id: String,
    pub schema: Schema,
    pub prompt_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_digest: Option<String>,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<ParsedOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentResult>,
    pub summary_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge: Option<RougeTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geval: Option<EvalScore>,
    pub timing_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_mode: Option<ParseMode>,
    pub doc_sentences: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(doc_id: &str, schema: Schema, doc_sentences: usize, message: String) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            schema,
            prompt_digest: String::new(),
            stage1_digest: None,
            raw_response: String::new(),
            parsed: None,
            alignment: None,
            summary_text: String::new(),
            rouge: None,
            geval: None,
            timing_ms: 0,
            parse_mode: None,
            doc_sentences,
            flags: vec!["failed".to_string()],
            error: Some(message),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Shared knobs for one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub model: String,
    pub token_config: TokenConfig,
    pub align_threshold: f64,
    pub templates: Templates,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".to_string(),
            token_config: TokenConfig::default(),
            align_threshold: crate::align::DEFAULT_ALIGN_THRESHOLD,
            templates: Templates::default(),
        }
    }
}

/// Where stage one of extract-then-generate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorSource {
    ModelExtracted,
    Oracle,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline configuration error: {message}")]
    Config { message: String },
    #[error("record io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record file {path} line {line}: {message}")]
    RecordFormat {
        path: String,
        line: usize,
        message: String,
    },
}

/// Bounded-worker map preserving input order. Worker count is clamped to
/// the item count; panics in workers propagate.
fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = f(&items[i]);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled slot"))
        .collect()
}

fn complete_timed(
    client: &Client,
    request: &ChatRequest,
) -> Result<(ChatResponse, u64), ClientError> {
    let start = Instant::now();
    let response = client.complete(request)?;
    Ok((response, start.elapsed().as_millis() as u64))
}

/// Align claimed sentences and join the matches in document order; the
/// model's own strings never enter the canonical summary.
fn canonical_extractive_summary(
    claimed: &[String],
    doc: &Document,
    threshold: f64,
) -> (AlignmentResult, String) {
    let alignment = align_to_document(claimed, doc, threshold);
    let text = alignment
        .matched_indices()
        .iter()
        .map(|&i| doc.sentences[i].text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    (alignment, text)
}

fn finish_extractive_record(
    entry: &CorpusEntry,
    doc: &Document,
    bundle: &PromptBundle,
    client: &Client,
    config: &PipelineConfig,
) -> RunRecord {
    let request = ChatRequest::from_bundle(&config.model, bundle);
    let digest = cache_key(&request);
    let (response, timing_ms) = match complete_timed(client, &request) {
        Ok(pair) => pair,
        Err(e) => {
            let mut record = RunRecord::failed(
                &entry.id,
                bundle.schema,
                doc.sentence_count(),
                e.to_string(),
            );
            record.prompt_digest = digest;
            return record;
        }
    };
    let mut flags = Vec::new();
    let parsed = match parse_output(&response.content, bundle.schema) {
        Ok(parsed) => parsed,
        Err(e) => {
            let mut record = RunRecord::failed(
                &entry.id,
                bundle.schema,
                doc.sentence_count(),
                e.to_string(),
            );
            record.prompt_digest = digest;
            record.raw_response = response.content;
            record.flags.push("unparseable".to_string());
            return record;
        }
    };
    let claimed = parsed.summary_sentences.clone().unwrap_or_default();
    let (alignment, summary_text) =
        canonical_extractive_summary(&claimed, doc, config.align_threshold);
    if summary_text.is_empty() {
        flags.push("empty_summary".to_string());
    }
    if !alignment.unmatched.is_empty() {
        flags.push("unmatched_claims".to_string());
    }
    let rouge = score_pair(&summary_text, &entry.summary, &config.token_config);
    RunRecord {
        doc_id: entry.id.clone(),
        schema: bundle.schema,
        prompt_digest: digest,
        stage1_digest: None,
        raw_response: response.content,
        parse_mode: Some(parsed.parse_mode),
        parsed: Some(parsed),
        alignment: Some(alignment),
        summary_text,
        rouge: Some(rouge),
        geval: None,
        timing_ms,
        doc_sentences: doc.sentence_count(),
        flags,
        error: None,
    }
}

/// Run the extractive family over a corpus: zero-shot when `fewshot` is
/// empty, in-context pairs otherwise, and explanation triads with
/// `with_reason`. Per-document failures are recorded, never fatal.
pub fn run_extractive(
    corpus: &[CorpusEntry],
    m: usize,
    client: &Client,
    config: &PipelineConfig,
    fewshot: Option<&[FewShotExample]>,
    with_reason: bool,
) -> Result<Vec<RunRecord>, PipelineError> {
    let examples = fewshot.unwrap_or(&[]);
    if with_reason {
        if examples.is_empty() {
            return Err(PipelineError::Config {
                message: "with_reason requires few-shot examples carrying reasons".to_string(),
            });
        }
        if let Some(i) = examples.iter().position(|e| e.reason.is_none()) {
            return Err(PipelineError::Config {
                message: format!("few-shot example {i} has no reason but with_reason is set"),
            });
        }
    } else if let Some(i) = examples.iter().position(|e| e.reason.is_some()) {
        return Err(PipelineError::Config {
            message: format!("few-shot example {i} carries a reason; pass with_reason"),
        });
    }
    if examples.len() > crate::prompt::MAX_FEW_SHOT {
        return Err(PipelineError::Config {
            message: format!(
                "{} few-shot examples exceed the maximum of {}",
                examples.len(),
                crate::prompt::MAX_FEW_SHOT
            ),
        });
    }

    let fi = if with_reason {
        FormatInstruction::extractive_with_reason()
    } else {
        FormatInstruction::extractive()
    };

    let mut records = parallel_map(corpus, client.max_in_flight(), |entry| {
        let doc = match entry.to_document() {
            Ok(doc) => doc,
            Err(e) => return RunRecord::failed(&entry.id, Schema::Extractive, 0, e.to_string()),
        };
        let built = if with_reason {
            build_explanation(&doc, m, examples, &fi, &config.templates)
        } else if examples.is_empty() {
            build_extractive(&doc, m, &fi, &config.templates)
        } else {
            build_in_context(&doc, m, examples, &fi, &config.templates)
        };
        let bundle = match built {
            Ok(bundle) => bundle,
            Err(e) => {
                return RunRecord::failed(
                    &entry.id,
                    Schema::Extractive,
                    doc.sentence_count(),
                    e.to_string(),
                )
            }
        };
        finish_extractive_record(entry, &doc, &bundle, client, config)
    });
    records.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(records)
}

/// Run the generate-only abstractive baseline.
pub fn run_abstractive(
    corpus: &[CorpusEntry],
    client: &Client,
    config: &PipelineConfig,
) -> Result<Vec<RunRecord>, PipelineError> {
    let fi = FormatInstruction::abstractive();
    let mut records = parallel_map(corpus, client.max_in_flight(), |entry| {
        let doc = match entry.to_document() {
            Ok(doc) => doc,
            Err(e) => return RunRecord::failed(&entry.id, Schema::Abstractive, 0, e.to_string()),
        };
        let bundle = match build_abstractive(&doc, &fi, &config.templates) {
            Ok(bundle) => bundle,
            Err(e) => {
                return RunRecord::failed(
                    &entry.id,
                    Schema::Abstractive,
                    doc.sentence_count(),
                    e.to_string(),
                )
            }
        };
        abstractive_record(entry, &doc, &bundle, None, client, config)
    });
    records.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(records)
}

fn abstractive_record(
    entry: &CorpusEntry,
    doc: &Document,
    bundle: &PromptBundle,
    stage1: Option<(String, AlignmentResult)>,
    client: &Client,
    config: &PipelineConfig,
) -> RunRecord {
    let request = ChatRequest::from_bundle(&config.model, bundle);
    let digest = cache_key(&request);
    let (stage1_digest, stage1_alignment) = match stage1 {
        Some((d, a)) => (Some(d), Some(a)),
        None => (None, None),
    };
    let (response, timing_ms) = match complete_timed(client, &request) {
        Ok(pair) => pair,
        Err(e) => {
            let mut record = RunRecord::failed(
                &entry.id,
                bundle.schema,
                doc.sentence_count(),
                e.to_string(),
            );
            record.prompt_digest = digest;
            record.stage1_digest = stage1_digest;
            return record;
        }
    };
    let mut flags = Vec::new();
    // Abstractive parsing cannot fail: the whole text is the fallback.
    let parsed = parse_output(&response.content, bundle.schema).expect("abstractive parse");
    let summary_text = parsed
        .summary_text
        .clone()
        .unwrap_or_default()
        .trim()
        .to_string();
    if summary_text.is_empty() {
        flags.push("empty_summary".to_string());
    }
    let rouge = score_pair(&summary_text, &entry.summary, &config.token_config);
    RunRecord {
        doc_id: entry.id.clone(),
        schema: bundle.schema,
        prompt_digest: digest,
        stage1_digest,
        raw_response: response.content,
        parse_mode: Some(parsed.parse_mode),
        parsed: Some(parsed),
        alignment: stage1_alignment,
        summary_text,
        rouge: Some(rouge),
        geval: None,
        timing_ms,
        doc_sentences: doc.sentence_count(),
        flags,
        error: None,
    }
}

/// Extract-then-generate: stage one produces an extractive summary (from
/// the model or from the greedy oracle), stage two revises it
/// abstractively. Records carry both stage digests; stage-one responses
/// always land in the cache, so the linkage is resolvable afterwards.
pub fn run_extract_then_generate(
    corpus: &[CorpusEntry],
    m: usize,
    client: &Client,
    config: &PipelineConfig,
    extractor: ExtractorSource,
) -> Result<Vec<RunRecord>, PipelineError> {
    let fi_extract = FormatInstruction::extractive();
    let fi_abstract = FormatInstruction::abstractive();
    let mut records = parallel_map(corpus, client.max_in_flight(), |entry| {
        let doc = match entry.to_document() {
            Ok(doc) => doc,
            Err(e) => {
                return RunRecord::failed(&entry.id, Schema::ExtractAbstract, 0, e.to_string())
            }
        };
        let sentence_count = doc.sentence_count();

        // Stage 1: obtain the extractive summary and its digest.
        let stage1_bundle = match build_extractive(&doc, m, &fi_extract, &config.templates) {
            Ok(bundle) => bundle,
            Err(e) => {
                return RunRecord::failed(
                    &entry.id,
                    Schema::ExtractAbstract,
                    sentence_count,
                    e.to_string(),
                )
            }
        };
        let stage1_request = ChatRequest::from_bundle(&config.model, &stage1_bundle);
        let stage1_digest = cache_key(&stage1_request);

        let extraction: Result<ExtractiveSummary, String> = match extractor {
            ExtractorSource::Oracle => {
                match greedy_oracle(&doc, &entry.summary, m, &config.token_config) {
                    Ok(oracle) => {
                        // Materialize the oracle answer as the stage-1
                        // response so the digest resolves in the cache.
                        if let Some(cache) = client.cache() {
                            if !cache.contains(&stage1_digest) {
                                let sorted = oracle.sorted_indices();
                                let texts: Vec<&str> = sorted
                                    .iter()
                                    .map(|&i| doc.sentences[i].text.as_str())
                                    .collect();
                                let content = serde_json::json!({ "summary": texts }).to_string();
                                let synthesized = ChatResponse {
                                    content,
                                    finish_reason: "oracle".to_string(),
                                    usage: Default::default(),
                                    cached: false,
                                };
                                if let Err(e) =
                                    cache.store(&stage1_digest, &stage1_request, &synthesized)
                                {
                                    return RunRecord::failed(
                                        &entry.id,
                                        Schema::ExtractAbstract,
                                        sentence_count,
                                        e.to_string(),
                                    );
                                }
                            }
                        }
                        Ok(oracle)
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
            ExtractorSource::ModelExtracted => match complete_timed(client, &stage1_request) {
                Ok((response, _)) => match parse_output(&response.content, Schema::Extractive) {
                    Ok(parsed) => {
                        let claimed = parsed.summary_sentences.unwrap_or_default();
                        let alignment = align_to_document(&claimed, &doc, config.align_threshold);
                        let indices = alignment.matched_indices();
                        let texts = indices
                            .iter()
                            .map(|&i| doc.sentences[i].text.clone())
                            .collect::<Vec<_>>();
                        let joined = texts.join(" ");
                        let score = score_pair(&joined, &entry.summary, &config.token_config);
                        Ok(ExtractiveSummary {
                            doc_id: entry.id.clone(),
                            indices,
                            texts,
                            score,
                        })
                    }
                    Err(e) => Err(e.to_string()),
                },
                Err(e) => Err(e.to_string()),
            },
        };

        let extraction = match extraction {
            Ok(ext) => ext,
            Err(message) => {
                let mut record =
                    RunRecord::failed(&entry.id, Schema::ExtractAbstract, sentence_count, message);
                record.stage1_digest = Some(stage1_digest);
                return record;
            }
        };

        if extraction.indices.is_empty() {
            // Stage 2 is skipped outright when there is nothing to revise.
            let mut record = RunRecord::failed(
                &entry.id,
                Schema::ExtractAbstract,
                sentence_count,
                "stage-1 extraction selected no sentences".to_string(),
            );
            record.stage1_digest = Some(stage1_digest);
            record.flags.push("empty_extraction".to_string());
            return record;
        }

        let stage1_alignment = align_to_document(&extraction.texts, &doc, config.align_threshold);
        let stage2_bundle =
            match build_extract_abstract(&doc, &extraction, &fi_abstract, &config.templates) {
                Ok(bundle) => bundle,
                Err(e) => {
                    let mut record = RunRecord::failed(
                        &entry.id,
                        Schema::ExtractAbstract,
                        sentence_count,
                        e.to_string(),
                    );
                    record.stage1_digest = Some(stage1_digest);
                    return record;
                }
            };
        abstractive_record(
            entry,
            &doc,
            &stage2_bundle,
            Some((stage1_digest, stage1_alignment)),
            client,
            config,
        )
    });
    records.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(records)
}

/// Judge every record's summary against the corpus gold reference,
/// recording criterion scores and the overall mean. Unparseable or
/// out-of-range judge output leaves `geval` empty and flags the record.
pub fn run_geval(
    records: &mut [RunRecord],
    corpus: &[CorpusEntry],
    client: &Client,
    config: &PipelineConfig,
) -> Result<(), PipelineError> {
    let gold: HashMap<&str, &str> = corpus
        .iter()
        .map(|e| (e.id.as_str(), e.summary.as_str()))
        .collect();
    let fi = FormatInstruction::evaluator();

    let outcomes = parallel_map(records, client.max_in_flight(), |record| {
        if record.is_failed() || record.summary_text.is_empty() {
            return (None, Some("geval_skipped".to_string()));
        }
        let Some(reference) = gold.get(record.doc_id.as_str()) else {
            return (None, Some("geval_missing_reference".to_string()));
        };
        let bundle = match build_evaluator(reference, &record.summary_text, &fi, &config.templates)
        {
            Ok(bundle) => bundle,
            Err(_) => return (None, Some("geval_skipped".to_string())),
        };
        let request = ChatRequest::from_bundle(&config.model, &bundle);
        let response = match client.complete(&request) {
            Ok(response) => response,
            Err(_) => return (None, Some("geval_backend_error".to_string())),
        };
        let parsed = match parse_output(&response.content, Schema::Evaluator) {
            Ok(parsed) => parsed,
            Err(_) => return (None, Some("unparseable_judge".to_string())),
        };
        let scores = parsed.scores.unwrap_or_default();
        match EvalScore::from_scores(&scores) {
            Ok(score) => (Some(score), None),
            Err(_) => (None, Some("geval_out_of_range".to_string())),
        }
    });

    for (record, (score, flag)) in records.iter_mut().zip(outcomes) {
        record.geval = score;
        if let Some(flag) = flag {
            if !record.flags.contains(&flag) {
                record.flags.push(flag);
            }
        }
    }
    Ok(())
}

/// Run provenance: enough to re-run and to detect any drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub corpus_digest: String,
    pub prompt_goldens_version: String,
    pub record_digest: String,
}

impl RunManifest {
    pub fn new(config: serde_json::Value, corpus: &[CorpusEntry], records: &[RunRecord]) -> Self {
        Self {
            config,
            corpus_digest: corpus_digest(corpus),
            prompt_goldens_version: TEMPLATES_VERSION.to_string(),
            record_digest: record_set_digest(records),
        }
    }
}

/// Digest of a record set in canonical form. Timing is volatile (cache
/// hits finish in microseconds), so it is zeroed before hashing; two runs
/// over the same corpus, config and cache hash identically.
pub fn record_set_digest(records: &[RunRecord]) -> String {
    let mut hasher = Sha256::new();
    for record in records {
        let mut canonical = record.clone();
        canonical.timing_ms = 0;
        hasher.update(serde_json::to_string(&canonical).expect("record serializes"));
        hasher.update(b"\n");
    }
    hex(&hasher.finalize())
}

/// Fraction of records with a schema-level failure.
pub fn failure_rate(records: &[RunRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.is_failed()).count() as f64 / records.len() as f64
}

pub fn write_records_jsonl(
    path: impl AsRef<Path>,
    records: &[RunRecord],
) -> Result<(), PipelineError> {
    let mut out = fs::File::create(path)?;
    for record in records {
        out.write_all(
            serde_json::to_string(record)
                .expect("record serializes")
                .as_bytes(),
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records_jsonl(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, PipelineError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord =
            serde_json::from_str(line).map_err(|e| PipelineError::RecordFormat {
                path: path.display().to_string(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}
