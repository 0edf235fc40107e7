//! Command-line surface: `oracle`, `summarize`, `evaluate`, `analyze`.
//!
//! Option precedence is CLI flag > config file > built-in dataset default.
//! API keys come only from the environment variable named by the backend
//! profile (`{PROFILE}_API_KEY` unless the profile overrides it), never
//! from a flag. Exit codes: 0 success, 2 configuration error, 3 io error,
//! 4 backend exhaustion.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    aggregate, length_buckets, oracle_position_histogram, position_histogram, render_text_report,
    write_length_csv, write_position_csv, write_results_csv, PositionDistribution, StdMode,
    DEFAULT_POSITION_BINS,
};
use crate::client::{
    BackendConfig, Client, ClientError, HttpBackend, MockBackend, MockRule, ResponseCache,
};
use crate::corpus::{
    dataset_config, load_jsonl, sample, CorpusEntry, CorpusError, SAMPLER_VERSION,
};
use crate::oracle::{oracle_corpus, OracleRecord};
use crate::pipeline::{
    failure_rate, read_records_jsonl, run_abstractive, run_extract_then_generate, run_extractive,
    run_geval, write_records_jsonl, ExtractorSource, PipelineConfig, PipelineError, RunManifest,
    RunRecord,
};
use crate::prompt::{FewShotExample, Templates, MAX_FEW_SHOT};
use crate::rouge::score_pair;
use crate::text::TokenConfig;

/// Default sampling seed; matches the experiment protocol default.
pub const DEFAULT_SEED: u64 = 101;

#[derive(Parser)]
#[command(
    name = "extsum",
    version,
    about = "Extractive summarization toolkit: oracle labels, LLM pipelines, evaluation, analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build greedy oracle labels for a corpus
    Oracle(OracleArgs),
    /// Run a summarization experiment family against a backend or mock
    Summarize(SummarizeArgs),
    /// Re-score records: recompute ROUGE and optionally run the judge
    Evaluate(EvaluateArgs),
    /// Aggregate record files into tables and figure data
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct OracleArgs {
    /// Corpus JSONL file
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Dataset name for built-in defaults (cnn_dm, xsum, reddit, pubmed)
    #[arg(long)]
    dataset: Option<String>,
    /// Extraction budget override
    #[arg(long)]
    m: Option<usize>,
    /// Sample this many documents before running
    #[arg(long)]
    sample: Option<usize>,
    /// Sampling seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// JSON config file mirroring these options
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SchemaArg {
    Extractive,
    Abstractive,
    ExtAbs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ExtractorArg {
    Model,
    Oracle,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Corpus JSONL file
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Dataset name for built-in defaults (cnn_dm, xsum, reddit, pubmed)
    #[arg(long)]
    dataset: Option<String>,
    /// Experiment family
    #[arg(long, value_enum)]
    schema: Option<SchemaArg>,
    /// Extraction budget override
    #[arg(long)]
    m: Option<usize>,
    /// In-context example count (0-5); extractive schema only
    #[arg(long)]
    k: Option<usize>,
    /// Provide reasons with the in-context examples
    #[arg(long)]
    with_reason: bool,
    /// Few-shot examples JSONL ({document, summary, reason?})
    #[arg(long)]
    fewshot_file: Option<PathBuf>,
    /// Stage-1 source for ext-abs: the model or the oracle
    #[arg(long, value_enum)]
    extractor: Option<ExtractorArg>,
    /// Backend: profile name, mock:oracle-echo, or mock:identity-judge
    #[arg(long)]
    backend: Option<String>,
    /// Model identifier sent on the wire
    #[arg(long)]
    model: Option<String>,
    /// Sample this many documents before running
    #[arg(long)]
    sample: Option<usize>,
    /// Sampling seed
    #[arg(long)]
    seed: Option<u64>,
    /// Response cache directory (defaults under the output directory)
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Disable the response cache
    #[arg(long)]
    no_cache: bool,
    /// Output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker pool size (bounds in-flight requests)
    #[arg(long)]
    concurrency: Option<usize>,
    /// Alignment similarity threshold in (0,1]
    #[arg(long)]
    align_threshold: Option<f64>,
    /// Use typo-corrected prompt templates
    #[arg(long)]
    corrected_prompts: bool,
    /// Run the judge over the produced records
    #[arg(long)]
    geval: bool,
    /// Config label override for reporting
    #[arg(long)]
    label: Option<String>,
    /// JSON config file mirroring these options
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Records JSONL produced by summarize
    #[arg(long)]
    records: PathBuf,
    /// Corpus JSONL file with gold summaries
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Run the judge in addition to ROUGE
    #[arg(long)]
    geval: bool,
    /// Backend for the judge (profile or mock:identity-judge)
    #[arg(long)]
    backend: Option<String>,
    /// Model identifier sent on the wire
    #[arg(long)]
    model: Option<String>,
    /// Response cache directory
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Disable the response cache
    #[arg(long)]
    no_cache: bool,
    /// Output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker pool size
    #[arg(long)]
    concurrency: Option<usize>,
    /// JSON config file mirroring these options
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Record JSONL files to aggregate
    #[arg(long, required = true, num_args = 1..)]
    records: Vec<PathBuf>,
    /// Comma-separated labels matching the record files
    #[arg(long)]
    labels: Option<String>,
    /// Oracle JSONL (from the oracle subcommand) for the position overlay
    #[arg(long)]
    oracle_records: Option<PathBuf>,
    /// Corpus JSONL; enables length bucketing
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Histogram bin count
    #[arg(long)]
    bins: Option<usize>,
    /// Comma-separated word-count bucket edges, e.g. 0,100,200,400
    #[arg(long)]
    length_edges: Option<String>,
    /// Report sample (n-1) standard deviation instead of population
    #[arg(long)]
    sample_std: bool,
    /// Output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// JSON config file mirroring these options
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Declarative config file: the same knobs as the flags, plus named
/// backend profiles.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<String>,
    corpus: Option<PathBuf>,
    schema: Option<String>,
    m: Option<usize>,
    k: Option<usize>,
    with_reason: Option<bool>,
    fewshot_file: Option<PathBuf>,
    extractor: Option<ExtractorArg>,
    backend: Option<String>,
    model: Option<String>,
    sample: Option<usize>,
    seed: Option<u64>,
    cache_dir: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    concurrency: Option<usize>,
    align_threshold: Option<f64>,
    corrected_prompts: Option<bool>,
    label: Option<String>,
    bins: Option<usize>,
    length_edges: Option<Vec<usize>>,
    #[serde(default)]
    backends: HashMap<String, BackendConfig>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Backend(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Backend(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Backend(m) => m,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config { .. } => CliError::Config(e.to_string()),
            PipelineError::Io(_) | PipelineError::RecordFormat { .. } => {
                CliError::Io(e.to_string())
            }
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Exhausted { .. } => CliError::Backend(e.to_string()),
            ClientError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

/// Entry point used by the binary.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Oracle(args) => cmd_oracle(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Analyze(args) => cmd_analyze(args),
    }
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(path) => {
            let raw = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&raw)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn pick_required<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::Config(format!("missing required option: {what}")))
}

fn load_corpus_at(path: &Path) -> Result<Vec<CorpusEntry>, CliError> {
    load_jsonl(path).map_err(|e| match e {
        CorpusError::Io(inner) => CliError::Io(format!("{}: {inner}", path.display())),
        other => CliError::Config(format!("{}: {other}", path.display())),
    })
}

fn maybe_sample(
    corpus: Vec<CorpusEntry>,
    n: Option<usize>,
    seed: u64,
) -> Result<Vec<CorpusEntry>, CliError> {
    match n {
        None => Ok(corpus),
        Some(n) => Ok(sample(&corpus, n, seed)?),
    }
}

fn budget_for(
    dataset: &Option<String>,
    m_flag: Option<usize>,
    m_file: Option<usize>,
) -> Result<usize, CliError> {
    if let Some(m) = m_flag.or(m_file) {
        if m == 0 {
            return Err(CliError::Config(
                "extraction budget m must be at least 1".into(),
            ));
        }
        return Ok(m);
    }
    match dataset {
        Some(name) => dataset_config(name)
            .map(|d| d.num_extract)
            .ok_or_else(|| CliError::Config(format!("unknown dataset {name:?}; pass --m"))),
        None => Err(CliError::Config(
            "no dataset and no --m given; cannot pick a budget".into(),
        )),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    let file = load_file_config(&args.config)?;
    let corpus_path = pick_required(args.corpus, file.corpus.clone(), "--corpus")?;
    let dataset = args.dataset.or(file.dataset.clone());
    let m = budget_for(&dataset, args.m, file.m)?;
    let seed = pick(args.seed, file.seed, DEFAULT_SEED);
    let output_dir = pick(
        args.output_dir,
        file.output_dir.clone(),
        PathBuf::from("out"),
    );

    let corpus = load_corpus_at(&corpus_path)?;
    let corpus = maybe_sample(corpus, args.sample.or(file.sample), seed)?;
    let token_config = TokenConfig::default();
    let (summaries, failures) = oracle_corpus(&corpus, m, &token_config);

    ensure_dir(&output_dir)?;
    let records: Vec<OracleRecord> = summaries
        .iter()
        .map(|(summary, count)| OracleRecord::new(summary, *count))
        .collect();
    let path = output_dir.join("oracle.jsonl");
    let mut body = String::new();
    for record in &records {
        body.push_str(&serde_json::to_string(record).expect("oracle record serializes"));
        body.push('\n');
    }
    fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;

    let mean = |f: &dyn Fn(&OracleRecord) -> f64| -> f64 {
        if records.is_empty() {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / records.len() as f64
        }
    };
    let stats = serde_json::json!({
        "documents": corpus.len(),
        "labeled": records.len(),
        "failures": failures.iter().map(|f| f.doc_id.clone()).collect::<Vec<_>>(),
        "budget": m,
        "mean_r1_f1": mean(&|r| r.r1_f1),
        "mean_r2_f1": mean(&|r| r.r2_f1),
        "mean_rl_f1": mean(&|r| r.rl_f1),
        "mean_selected": mean(&|r| r.indices.len() as f64),
        "sampler": SAMPLER_VERSION,
        "seed": seed,
    });
    let stats_path = output_dir.join("oracle_summary.json");
    fs::write(
        &stats_path,
        serde_json::to_string_pretty(&stats).expect("stats serialize"),
    )
    .map_err(|e| CliError::Io(format!("{}: {e}", stats_path.display())))?;

    println!(
        "oracle: {} labeled, {} failed, mean R1 {:.4} -> {}",
        records.len(),
        failures.len(),
        stats["mean_r1_f1"].as_f64().unwrap_or(0.0),
        path.display()
    );
    Ok(())
}

fn load_fewshot(path: &Path, k: usize, with_reason: bool) -> Result<Vec<FewShotExample>, CliError> {
    let raw =
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut examples = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let example: FewShotExample = serde_json::from_str(line).map_err(|e| {
            CliError::Config(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        examples.push(example);
    }
    if examples.len() < k {
        return Err(CliError::Config(format!(
            "{} provides {} examples but k={k}",
            path.display(),
            examples.len()
        )));
    }
    examples.truncate(k);
    if with_reason {
        if let Some(i) = examples.iter().position(|e| e.reason.is_none()) {
            return Err(CliError::Config(format!(
                "--with-reason set but example {} of {} has no reason",
                i + 1,
                path.display()
            )));
        }
    } else {
        // The same exemplar file serves both modes; reasons are simply
        // dropped when not requested.
        for example in &mut examples {
            example.reason = None;
        }
    }
    Ok(examples)
}

fn build_client(
    backend_spec: &str,
    file: &FileConfig,
    corpus: &[CorpusEntry],
    m: usize,
    concurrency: usize,
    cache_dir: Option<&Path>,
) -> Result<Client, CliError> {
    let mut config = match backend_spec {
        spec if spec.starts_with("mock:") => BackendConfig::default(),
        profile => file
            .backends
            .get(profile)
            .cloned()
            .unwrap_or_else(|| BackendConfig {
                api_key_env: format!("{}_API_KEY", profile.to_uppercase().replace('-', "_")),
                ..BackendConfig::default()
            }),
    };
    config.max_in_flight = concurrency;

    let backend: Box<dyn crate::client::Backend> = match backend_spec {
        "mock:oracle-echo" => Box::new(MockBackend::with_rule(MockRule::OracleEcho {
            corpus: corpus.to_vec(),
            m,
            token_config: TokenConfig::default(),
        })?),
        "mock:identity-judge" => Box::new(MockBackend::with_rule(MockRule::IdentityJudge)?),
        spec if spec.starts_with("mock:") => {
            return Err(CliError::Config(format!(
                "unknown mock backend {spec:?}; use mock:oracle-echo or mock:identity-judge"
            )))
        }
        profile => Box::new(HttpBackend::from_config(&config, profile)?),
    };

    let mut client = Client::new(backend, &config);
    if let Some(dir) = cache_dir {
        client = client.with_cache(ResponseCache::open(dir)?);
    }
    Ok(client)
}

fn slugify(label: &str) -> String {
    let slug: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    slug.trim_matches('-').to_string()
}

fn cmd_summarize(args: SummarizeArgs) -> Result<(), CliError> {
    let file = load_file_config(&args.config)?;
    let corpus_path = pick_required(args.corpus, file.corpus.clone(), "--corpus")?;
    let dataset = args.dataset.clone().or(file.dataset.clone());
    let schema = match (args.schema, file.schema.as_deref()) {
        (Some(s), _) => s,
        (None, Some("extractive")) => SchemaArg::Extractive,
        (None, Some("abstractive")) => SchemaArg::Abstractive,
        (None, Some("ext-abs")) => SchemaArg::ExtAbs,
        (None, Some(other)) => {
            return Err(CliError::Config(format!(
                "config file schema {other:?} not recognized"
            )))
        }
        (None, None) => SchemaArg::Extractive,
    };
    let k = pick(args.k, file.k, 0);
    let with_reason = args.with_reason || file.with_reason.unwrap_or(false);
    let extractor = pick(args.extractor, file.extractor, ExtractorArg::Model);
    let backend_spec = pick(
        args.backend,
        file.backend.clone(),
        "mock:oracle-echo".to_string(),
    );
    let model = pick(args.model, file.model.clone(), "gpt-3.5-turbo".to_string());
    let seed = pick(args.seed, file.seed, DEFAULT_SEED);
    let output_dir = pick(
        args.output_dir,
        file.output_dir.clone(),
        PathBuf::from("out"),
    );
    let concurrency = pick(args.concurrency, file.concurrency, 4).max(1);
    let align_threshold = pick(args.align_threshold, file.align_threshold, 0.8);
    let corrected = args.corrected_prompts || file.corrected_prompts.unwrap_or(false);

    // Schema-specific validation happens before any backend is touched.
    if k > MAX_FEW_SHOT {
        return Err(CliError::Config(format!(
            "k={k} exceeds the maximum of {MAX_FEW_SHOT}"
        )));
    }
    if !(0.0..=1.0).contains(&align_threshold) || align_threshold == 0.0 {
        return Err(CliError::Config(format!(
            "--align-threshold {align_threshold} outside (0, 1]"
        )));
    }
    if schema != SchemaArg::Extractive && (k > 0 || with_reason) {
        return Err(CliError::Config(
            "--k and --with-reason apply only to --schema extractive".into(),
        ));
    }
    let fewshot_path = args.fewshot_file.or(file.fewshot_file.clone());
    let fewshot = if k > 0 || with_reason {
        let path = fewshot_path.ok_or_else(|| {
            CliError::Config("k>0 or --with-reason requires --fewshot-file".into())
        })?;
        let effective_k = if k == 0 { MAX_FEW_SHOT.min(3) } else { k };
        Some(load_fewshot(&path, effective_k, with_reason)?)
    } else {
        None
    };

    let m = budget_for(&dataset, args.m, file.m)?;
    let corpus = load_corpus_at(&corpus_path)?;
    let corpus = maybe_sample(corpus, args.sample.or(file.sample), seed)?;

    ensure_dir(&output_dir)?;
    let cache_dir = if args.no_cache {
        None
    } else {
        Some(pick(
            args.cache_dir,
            file.cache_dir.clone(),
            output_dir.join("cache"),
        ))
    };
    if let Some(dir) = &cache_dir {
        ensure_dir(dir)?;
    }
    let client = build_client(
        &backend_spec,
        &file,
        &corpus,
        m,
        concurrency,
        cache_dir.as_deref(),
    )?;

    let pipeline_config = PipelineConfig {
        model: model.clone(),
        token_config: TokenConfig::default(),
        align_threshold,
        templates: Templates { corrected },
    };

    let label = args.label.or(file.label.clone()).unwrap_or_else(|| {
        match (schema, k > 0, with_reason, extractor) {
            (SchemaArg::Extractive, false, false, _) => "Ext".to_string(),
            (SchemaArg::Extractive, _, false, _) => "+context".to_string(),
            (SchemaArg::Extractive, _, true, _) => "+reason".to_string(),
            (SchemaArg::Abstractive, ..) => "Abs".to_string(),
            (SchemaArg::ExtAbs, _, _, ExtractorArg::Model) => "Ext-Abs".to_string(),
            (SchemaArg::ExtAbs, _, _, ExtractorArg::Oracle) => "Oracle-Abs".to_string(),
        }
    });

    let mut records = match schema {
        SchemaArg::Extractive => run_extractive(
            &corpus,
            m,
            &client,
            &pipeline_config,
            fewshot.as_deref(),
            with_reason,
        )?,
        SchemaArg::Abstractive => run_abstractive(&corpus, &client, &pipeline_config)?,
        SchemaArg::ExtAbs => {
            let source = match extractor {
                ExtractorArg::Model => ExtractorSource::ModelExtracted,
                ExtractorArg::Oracle => ExtractorSource::Oracle,
            };
            run_extract_then_generate(&corpus, m, &client, &pipeline_config, source)?
        }
    };

    if args.geval {
        run_geval(&mut records, &corpus, &client, &pipeline_config)?;
    }

    let slug = slugify(&label);
    let records_path = output_dir.join(format!("records_{slug}.jsonl"));
    write_records_jsonl(&records_path, &records)?;

    let manifest = RunManifest::new(
        serde_json::json!({
            "label": label,
            "dataset": dataset,
            "schema": format!("{schema:?}"),
            "m": m,
            "k": k,
            "with_reason": with_reason,
            "extractor": format!("{extractor:?}"),
            "backend": backend_spec,
            "model": model,
            "seed": seed,
            "align_threshold": align_threshold,
            "corrected_prompts": corrected,
            "concurrency": concurrency,
            "sampler": SAMPLER_VERSION,
        }),
        &corpus,
        &records,
    );
    let manifest_path = output_dir.join(format!("manifest_{slug}.json"));
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| CliError::Io(format!("{}: {e}", manifest_path.display())))?;

    let failed = failure_rate(&records);
    println!(
        "summarize[{label}]: {} records, failure rate {:.2}, records {} manifest {}",
        records.len(),
        failed,
        records_path.display(),
        manifest_path.display()
    );
    if failed >= 1.0 && !records.is_empty() {
        return Err(CliError::Backend("every document in the run failed".into()));
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let file = load_file_config(&args.config)?;
    let corpus_path = pick_required(args.corpus, file.corpus.clone(), "--corpus")?;
    let output_dir = pick(
        args.output_dir,
        file.output_dir.clone(),
        PathBuf::from("out"),
    );
    let concurrency = pick(args.concurrency, file.concurrency, 4).max(1);
    let model = pick(args.model, file.model.clone(), "gpt-3.5-turbo".to_string());

    let corpus = load_corpus_at(&corpus_path)?;
    let gold: HashMap<&str, &str> = corpus
        .iter()
        .map(|e| (e.id.as_str(), e.summary.as_str()))
        .collect();
    let mut records: Vec<RunRecord> = read_records_jsonl(&args.records)?;

    // Recompute ROUGE from the stored summaries and verify the records.
    let token_config = TokenConfig::default();
    let mut mismatches = 0usize;
    for record in &mut records {
        let Some(reference) = gold.get(record.doc_id.as_str()) else {
            return Err(CliError::Config(format!(
                "record {} has no corpus entry in {}",
                record.doc_id,
                corpus_path.display()
            )));
        };
        if record.is_failed() {
            continue;
        }
        let recomputed = score_pair(&record.summary_text, reference, &token_config);
        let drifted = match record.rouge {
            Some(stored) => (stored.r1.f1 - recomputed.r1.f1).abs() > 1e-9,
            None => true,
        };
        if drifted {
            mismatches += 1;
            if !record.flags.contains(&"rouge_recomputed".to_string()) {
                record.flags.push("rouge_recomputed".to_string());
            }
        }
        record.rouge = Some(recomputed);
    }

    if args.geval {
        let backend_spec = pick(
            args.backend,
            file.backend.clone(),
            "mock:identity-judge".to_string(),
        );
        let cache_dir = if args.no_cache {
            None
        } else {
            Some(pick(
                args.cache_dir,
                file.cache_dir.clone(),
                output_dir.join("cache"),
            ))
        };
        ensure_dir(&output_dir)?;
        if let Some(dir) = &cache_dir {
            ensure_dir(dir)?;
        }
        let client = build_client(
            &backend_spec,
            &file,
            &corpus,
            1,
            concurrency,
            cache_dir.as_deref(),
        )?;
        let pipeline_config = PipelineConfig {
            model,
            ..PipelineConfig::default()
        };
        run_geval(&mut records, &corpus, &client, &pipeline_config)?;
    }

    ensure_dir(&output_dir)?;
    let stem = args
        .records
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "records".to_string());
    let out_path = output_dir.join(format!("{stem}_evaluated.jsonl"));
    write_records_jsonl(&out_path, &records)?;
    println!(
        "evaluate: {} records, {} rouge mismatches repaired -> {}",
        records.len(),
        mismatches,
        out_path.display()
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let file = load_file_config(&args.config)?;
    let output_dir = pick(
        args.output_dir,
        file.output_dir.clone(),
        PathBuf::from("out"),
    );
    let bins = pick(args.bins, file.bins, DEFAULT_POSITION_BINS);
    if bins == 0 {
        return Err(CliError::Config("--bins must be at least 1".into()));
    }
    let mode = if args.sample_std {
        StdMode::Sample
    } else {
        StdMode::Population
    };

    let labels: Option<Vec<String>> = args
        .labels
        .map(|s| s.split(',').map(|p| p.trim().to_string()).collect());
    if let Some(labels) = &labels {
        if labels.len() != args.records.len() {
            return Err(CliError::Config(format!(
                "{} labels given for {} record files",
                labels.len(),
                args.records.len()
            )));
        }
    }

    let mut labeled: Vec<(String, Vec<RunRecord>)> = Vec::new();
    for (i, path) in args.records.iter().enumerate() {
        let records = read_records_jsonl(path)?;
        let label = match &labels {
            Some(labels) => labels[i].clone(),
            None => path
                .file_stem()
                .map(|s| {
                    s.to_string_lossy()
                        .trim_start_matches("records_")
                        .to_string()
                })
                .unwrap_or_else(|| format!("set{i}")),
        };
        labeled.push((label, records));
    }

    ensure_dir(&output_dir)?;
    let rows = aggregate(&labeled, mode);
    write_results_csv(output_dir.join("results_table.csv"), &rows)
        .map_err(|e| CliError::Io(e.to_string()))?;

    let mut distributions: Vec<PositionDistribution> = Vec::new();
    let all_records: Vec<RunRecord> = labeled
        .iter()
        .flat_map(|(_, records)| records.iter().cloned())
        .collect();
    distributions.push(position_histogram(&all_records, bins));
    if let Some(path) = &args.oracle_records {
        let raw = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut oracle_records = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: OracleRecord = serde_json::from_str(line).map_err(|e| {
                CliError::Config(format!("{} line {}: {e}", path.display(), lineno + 1))
            })?;
            oracle_records.push(record);
        }
        distributions.push(oracle_position_histogram(&oracle_records, bins));
    }
    write_position_csv(output_dir.join("position_hist.csv"), &distributions)
        .map_err(|e| CliError::Io(e.to_string()))?;

    if let Some(corpus_path) = &args.corpus {
        let corpus = load_corpus_at(corpus_path)?;
        let edges: Vec<usize> = match args
            .length_edges
            .map(|s| {
                s.split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()
            .map_err(|e| CliError::Config(format!("--length-edges: {e}")))?
        {
            Some(edges) => edges,
            None => file
                .length_edges
                .clone()
                .unwrap_or_else(|| vec![0, 50, 100, 200, 400, 100_000]),
        };
        let buckets = length_buckets(&all_records, &corpus, &edges, mode)
            .map_err(|e| CliError::Config(e.to_string()))?;
        write_length_csv(output_dir.join("length_buckets.csv"), &buckets)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }

    let report = render_text_report(&rows, &distributions);
    let report_path = output_dir.join("report.txt");
    fs::write(&report_path, &report)
        .map_err(|e| CliError::Io(format!("{}: {e}", report_path.display())))?;
    print!("{report}");
    println!("analyze: wrote {}", output_dir.display());
    Ok(())
}

/// Every long flag the binary exposes, per subcommand; the README flag
/// tables are tested against this list.
pub fn flag_inventory() -> Vec<(&'static str, Vec<String>)> {
    use clap::CommandFactory;
    let command = Cli::command();
    command
        .get_subcommands()
        .map(|sub| {
            let flags: Vec<String> = sub
                .get_arguments()
                .filter(|a| !a.is_hide_set())
                .filter_map(|a| a.get_long().map(|l| format!("--{l}")))
                .collect();
            let name: &'static str = match sub.get_name() {
                "oracle" => "oracle",
                "summarize" => "summarize",
                "evaluate" => "evaluate",
                "analyze" => "analyze",
                _ => "other",
            };
            (name, flags)
        })
        .collect()
}
