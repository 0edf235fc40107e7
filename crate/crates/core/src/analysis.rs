//! Aggregate statistics and figure data: results tables, the
//! positional-bias histogram, and per-length score buckets.
//!
//! Positions are normalized (sentence index over sentence count minus one)
//! so documents of different lengths are comparable; a single-sentence
//! document contributes at position zero. Standard deviation is population
//! by default with a sample-mode switch. CSV emission rounds to four
//! decimals; everything upstream stays full precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusEntry;
use crate::oracle::OracleRecord;
use crate::pipeline::RunRecord;
use crate::rouge::round4;
use crate::text::{tokenize, TokenConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum StdMode {
    #[default]
    Population,
    Sample,
}

/// Mean and standard deviation of one metric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub const EMPTY: Stat = Stat {
        mean: 0.0,
        std: 0.0,
    };
}

/// Two-pass mean/std; population variance divides by n, sample by n-1
/// (zero when a single value).
pub fn mean_std(values: &[f64], mode: StdMode) -> Stat {
    if values.is_empty() {
        return Stat::EMPTY;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sum_sq: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match mode {
        StdMode::Population => n,
        StdMode::Sample => {
            if values.len() < 2 {
                return Stat { mean, std: 0.0 };
            }
            n - 1.0
        }
    };
    Stat {
        mean,
        std: (sum_sq / denom).sqrt(),
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub n: usize,
    pub r1: Stat,
    pub r2: Stat,
    pub rl: Stat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geval: Option<Stat>,
    pub failure_rate: f64,
}

/// Per-label mean/std over record sets. ROUGE statistics run over the F1
/// of every scored (non-failed) record; G-EVAL statistics appear when at
/// least one record carries judge scores.
pub fn aggregate(labeled: &[(String, Vec<RunRecord>)], mode: StdMode) -> Vec<AggregateRow> {
    labeled
        .iter()
        .map(|(label, records)| {
            let scored: Vec<&RunRecord> = records.iter().filter(|r| r.rouge.is_some()).collect();
            let column = |f: &dyn Fn(&RunRecord) -> f64| -> Vec<f64> {
                scored.iter().map(|r| f(r)).collect()
            };
            let r1 = mean_std(&column(&|r| r.rouge.unwrap().r1.f1), mode);
            let r2 = mean_std(&column(&|r| r.rouge.unwrap().r2.f1), mode);
            let rl = mean_std(&column(&|r| r.rouge.unwrap().rl.f1), mode);
            let geval_values: Vec<f64> = records
                .iter()
                .filter_map(|r| r.geval.map(|g| g.overall))
                .collect();
            let geval = if geval_values.is_empty() {
                None
            } else {
                Some(mean_std(&geval_values, mode))
            };
            AggregateRow {
                label: label.clone(),
                n: records.len(),
                r1,
                r2,
                rl,
                geval,
                failure_rate: crate::pipeline::failure_rate(records),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSource {
    Model,
    Oracle,
}

/// One equal-width histogram bin over normalized positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionBin {
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

/// Distribution of extracted-sentence positions, normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionDistribution {
    pub bins: Vec<PositionBin>,
    pub mean_position: f64,
    pub source: PositionSource,
}

pub const DEFAULT_POSITION_BINS: usize = 10;

fn normalized_position(index: usize, sentence_count: usize) -> f64 {
    if sentence_count <= 1 {
        0.0
    } else {
        index as f64 / (sentence_count - 1) as f64
    }
}

fn histogram(positions: &[f64], num_bins: usize, source: PositionSource) -> PositionDistribution {
    assert!(num_bins >= 1, "histogram needs at least one bin");
    let width = 1.0 / num_bins as f64;
    let mut counts = vec![0usize; num_bins];
    for &p in positions {
        // Right-closed last bin: position 1.0 lands in the final bin.
        let bin = ((p * num_bins as f64) as usize).min(num_bins - 1);
        counts[bin] += 1;
    }
    let total = positions.len();
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| PositionBin {
            lo: i as f64 * width,
            hi: if i + 1 == num_bins {
                1.0
            } else {
                (i + 1) as f64 * width
            },
            mass: if total == 0 {
                0.0
            } else {
                c as f64 / total as f64
            },
        })
        .collect();
    let mean_position = if total == 0 {
        0.0
    } else {
        positions.iter().sum::<f64>() / total as f64
    };
    PositionDistribution {
        bins,
        mean_position,
        source,
    }
}

/// Histogram of matched source positions across run records.
pub fn position_histogram(records: &[RunRecord], num_bins: usize) -> PositionDistribution {
    let positions: Vec<f64> = records
        .iter()
        .filter_map(|r| r.alignment.as_ref().map(|a| (a, r.doc_sentences)))
        .flat_map(|(alignment, count)| {
            alignment
                .matched
                .iter()
                .map(move |m| normalized_position(m.source_index, count))
        })
        .collect();
    histogram(&positions, num_bins, PositionSource::Model)
}

/// Histogram of oracle-selected positions, for the model/oracle overlay.
pub fn oracle_position_histogram(
    records: &[OracleRecord],
    num_bins: usize,
) -> PositionDistribution {
    let positions: Vec<f64> = records
        .iter()
        .flat_map(|r| {
            r.indices
                .iter()
                .map(move |&i| normalized_position(i, r.sentence_count))
        })
        .collect();
    histogram(&positions, num_bins, PositionSource::Oracle)
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("bucket edges must be strictly increasing with at least two values")]
    BadEdges,
    #[error("record {id:?} has no corpus entry")]
    MissingDocument { id: String },
    #[error("io error writing analysis output: {0}")]
    Io(#[from] std::io::Error),
}

/// A length bucket `[lo, hi)` (last bucket right-inclusive) with its
/// aggregate scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub lo: usize,
    pub hi: usize,
    pub row: AggregateRow,
}

/// Bucket records by their document's word count and aggregate ROUGE per
/// bucket. Word count is the default-tokenizer token count of the
/// document text.
pub fn length_buckets(
    records: &[RunRecord],
    corpus: &[CorpusEntry],
    edges: &[usize],
    mode: StdMode,
) -> Result<Vec<LengthBucket>, AnalysisError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::BadEdges);
    }
    let token_config = TokenConfig::default();
    let word_counts: std::collections::HashMap<&str, usize> = corpus
        .iter()
        .map(|e| (e.id.as_str(), tokenize(&e.document, &token_config).len()))
        .collect();

    let nbuckets = edges.len() - 1;
    let mut grouped: Vec<Vec<RunRecord>> = vec![Vec::new(); nbuckets];
    for record in records {
        let &words = word_counts.get(record.doc_id.as_str()).ok_or_else(|| {
            AnalysisError::MissingDocument {
                id: record.doc_id.clone(),
            }
        })?;
        let bucket = (0..nbuckets).find(|&i| {
            let last = i + 1 == nbuckets;
            words >= edges[i] && (words < edges[i + 1] || (last && words == edges[i + 1]))
        });
        if let Some(i) = bucket {
            grouped[i].push(record.clone());
        }
    }

    let rows: Vec<LengthBucket> = grouped
        .into_iter()
        .enumerate()
        .map(|(i, bucket_records)| {
            let label = format!("{}-{}", edges[i], edges[i + 1]);
            let row = aggregate(&[(label, bucket_records)], mode)
                .pop()
                .expect("one row");
            LengthBucket {
                lo: edges[i],
                hi: edges[i + 1],
                row,
            }
        })
        .collect();
    Ok(rows)
}

fn fmt_stat(stat: &Stat) -> String {
    format!("{},{}", round4(stat.mean), round4(stat.std))
}

/// Write the results table CSV (`results_table.csv` columns).
pub fn write_results_csv(
    path: impl AsRef<Path>,
    rows: &[AggregateRow],
) -> Result<(), AnalysisError> {
    let mut out = String::from(
        "label,n,r1_mean,r1_std,r2_mean,r2_std,rl_mean,rl_std,geval_mean,geval_std,failure_rate\n",
    );
    for row in rows {
        let geval = match &row.geval {
            Some(stat) => fmt_stat(stat),
            None => ",".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.label,
            row.n,
            fmt_stat(&row.r1),
            fmt_stat(&row.r2),
            fmt_stat(&row.rl),
            geval,
            round4(row.failure_rate),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write one or more position distributions (`position_hist.csv` columns).
pub fn write_position_csv(
    path: impl AsRef<Path>,
    distributions: &[PositionDistribution],
) -> Result<(), AnalysisError> {
    let mut out = String::from("source,bin_lo,bin_hi,mass\n");
    for dist in distributions {
        let source = match dist.source {
            PositionSource::Model => "model",
            PositionSource::Oracle => "oracle",
        };
        for bin in &dist.bins {
            out.push_str(&format!(
                "{source},{},{},{}\n",
                round4(bin.lo),
                round4(bin.hi),
                round4(bin.mass)
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write per-length-bucket aggregates (`length_buckets.csv` columns).
pub fn write_length_csv(
    path: impl AsRef<Path>,
    buckets: &[LengthBucket],
) -> Result<(), AnalysisError> {
    let mut out =
        String::from("bucket_lo,bucket_hi,n,r1_mean,r1_std,r2_mean,r2_std,rl_mean,rl_std\n");
    for bucket in buckets {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            bucket.lo,
            bucket.hi,
            bucket.row.n,
            fmt_stat(&bucket.row.r1),
            fmt_stat(&bucket.row.r2),
            fmt_stat(&bucket.row.rl),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Fixed-width text rendering of the results table plus histograms;
/// plotting itself is left to external tools.
pub fn render_text_report(rows: &[AggregateRow], distributions: &[PositionDistribution]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "config", "n", "R1", "R2", "RL", "G-EVAL", "fail"
    ));
    for row in rows {
        let geval = row
            .geval
            .map(|g| format!("{:.4}", g.mean))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<16} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8.4}\n",
            row.label, row.n, row.r1.mean, row.r2.mean, row.rl.mean, geval, row.failure_rate
        ));
    }
    for dist in distributions {
        let source = match dist.source {
            PositionSource::Model => "model",
            PositionSource::Oracle => "oracle",
        };
        out.push_str(&format!(
            "\nposition distribution ({source}), mean {:.4}\n",
            dist.mean_position
        ));
        for bin in &dist.bins {
            let bar = "#".repeat((bin.mass * 50.0).round() as usize);
            out.push_str(&format!(
                "  [{:.2},{:.2}] {:>7.4} {bar}\n",
                bin.lo, bin.hi, bin.mass
            ));
        }
    }
    out
}
