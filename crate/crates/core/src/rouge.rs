//! From-scratch ROUGE-1/2/L computation over token sequences.
//!
//! ROUGE-N uses clipped multiset n-gram matching; ROUGE-L uses a single
//! longest-common-subsequence over the full token sequences (not the
//! sentence-level summary variant). All scores are reported as
//! precision/recall/F1 in `[0, 1]`; rounding happens only at the
//! reporting layer.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::text::{tokenize, TokenConfig};

/// Precision/recall/F for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(matches: usize, candidate_total: usize, reference_total: usize) -> Self {
        let precision = if candidate_total == 0 {
            0.0
        } else {
            matches as f64 / candidate_total as f64
        };
        let recall = if reference_total == 0 {
            0.0
        } else {
            matches as f64 / reference_total as f64
        };
        Self {
            precision,
            recall,
            f1: f_measure(precision, recall),
        }
    }

    pub const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

/// ROUGE-1, ROUGE-2 and ROUGE-L for one candidate-reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

impl RougeTriple {
    pub const ZERO: RougeTriple = RougeTriple {
        r1: RougeScore::ZERO,
        r2: RougeScore::ZERO,
        rl: RougeScore::ZERO,
    };
}

fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// ROUGE-N with clipped multiset counting: each reference n-gram can be
/// matched at most as many times as it occurs in the reference.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be at least 1");
    let cand_counts = ngram_counts(candidate, n);
    let ref_counts = ngram_counts(reference, n);

    let mut matches = 0usize;
    for (gram, count) in &cand_counts {
        if let Some(ref_count) = ref_counts.get(gram) {
            matches += count.min(ref_count);
        }
    }
    let cand_total: usize = cand_counts.values().sum();
    let ref_total: usize = ref_counts.values().sum();
    RougeScore::from_counts(matches, cand_total, ref_total)
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        let gram: Vec<&str> = window.iter().map(|t| t.as_ref()).collect();
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-L over the whole token sequences: P = LCS/|candidate|,
/// R = LCS/|reference|.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::ZERO;
    }
    let lcs = lcs_length(candidate, reference);
    RougeScore::from_counts(lcs, candidate.len(), reference.len())
}

// Two-row dynamic program; O(n*m) time, O(min) extra space not needed at
// these sequence lengths.
fn lcs_length<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Tokenize both strings with `config` and score the pair on all three
/// metrics.
pub fn score_pair(candidate: &str, reference: &str, config: &TokenConfig) -> RougeTriple {
    let cand = tokenize(candidate, config);
    let reference = tokenize(reference, config);
    RougeTriple {
        r1: rouge_n(&cand, &reference, 1),
        r2: rouge_n(&cand, &reference, 2),
        rl: rouge_l(&cand, &reference),
    }
}

/// Round to four decimals; reporting layers only.
pub fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}
