//! Property tests for the metric, segmentation, alignment, and sampling
//! invariants.

use proptest::prelude::*;

use extsum::align::{align_to_document, normalized_similarity};
use extsum::corpus::{dev_split, sample, CorpusEntry};
use extsum::rouge::{rouge_l, rouge_n, score_pair};
use extsum::text::{segment_sentences, tokenize, Document, TokenConfig};

fn token_vec(max_len: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec!["aa", "bb", "cc", "dd", "ee"]).prop_map(String::from),
        0..=max_len,
    )
}

proptest! {
    #[test]
    fn rouge_symmetry_swap(a in token_vec(12), b in token_vec(12), n in 1usize..=3) {
        let ab = rouge_n(&a, &b, n);
        let ba = rouge_n(&b, &a, n);
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
        prop_assert!((ab.f1 - ba.f1).abs() <= 1e-15);
    }

    #[test]
    fn rouge_scores_stay_in_unit_interval(a in token_vec(12), b in token_vec(12), n in 1usize..=3) {
        for score in [rouge_n(&a, &b, n), rouge_l(&a, &b)] {
            prop_assert!((0.0..=1.0).contains(&score.precision));
            prop_assert!((0.0..=1.0).contains(&score.recall));
            prop_assert!((0.0..=1.0).contains(&score.f1));
            if score.precision > 0.0 && score.recall > 0.0 {
                prop_assert!(score.f1 <= score.precision.max(score.recall) + 1e-15);
                prop_assert!(score.f1 >= score.precision.min(score.recall) - 1e-15);
            }
        }
    }

    #[test]
    fn recall_never_drops_when_appending_reference_token(
        candidate in token_vec(8),
        reference in token_vec(8).prop_filter("non-empty", |r| !r.is_empty()),
        pick in any::<prop::sample::Index>(),
        n in 1usize..=2,
    ) {
        let before = rouge_n(&candidate, &reference, n).recall;
        let mut grown = candidate.clone();
        grown.push(reference[pick.index(reference.len())].clone());
        let after = rouge_n(&grown, &reference, n).recall;
        prop_assert!(after >= before - 1e-15);
    }

    #[test]
    fn lcs_bounded_by_shorter_sequence(a in token_vec(12), b in token_vec(12)) {
        let score = rouge_l(&a, &b);
        if !a.is_empty() && !b.is_empty() {
            // precision = lcs/|a| <= min(|a|,|b|)/|a|
            let bound = a.len().min(b.len()) as f64 / a.len() as f64;
            prop_assert!(score.precision <= bound + 1e-15);
        }
    }

    #[test]
    fn tokenize_is_deterministic_and_lowercase(text in "\\PC{0,80}") {
        let config = TokenConfig::default();
        let first = tokenize(&text, &config);
        let second = tokenize(&text, &config);
        prop_assert_eq!(&first, &second);
        for token in &first {
            prop_assert!(!token.is_empty());
            // Lowercasing is a fixed point (some uppercase letters, e.g.
            // mathematical alphanumerics, have no lowercase mapping).
            prop_assert_eq!(&token.to_lowercase(), token);
        }
    }

    #[test]
    fn score_pair_identity_is_one(text in "[a-z]{1,10}( [a-z]{1,10}){0,10}") {
        let triple = score_pair(&text, &text, &TokenConfig::default());
        prop_assert!((triple.r1.f1 - 1.0).abs() <= 1e-15);
        prop_assert!((triple.rl.f1 - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(a in "\\PC{0,40}", b in "\\PC{0,40}") {
        let ab = normalized_similarity(&a, &b);
        let ba = normalized_similarity(&b, &a);
        prop_assert!((ab - ba).abs() <= 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(normalized_similarity(&a, &a), 1.0);
    }
}

fn sentence_text() -> impl Strategy<Value = String> {
    // Capitalized word, a few lowercase words, terminal period: the shape
    // the segmenter promises to preserve.
    ("[A-Z][a-z]{2,8}", prop::collection::vec("[a-z]{2,8}", 1..6))
        .prop_map(|(head, tail)| format!("{head} {}.", tail.join(" ")))
}

proptest! {
    #[test]
    fn segmentation_covers_all_alphanumerics(sentences in prop::collection::vec(sentence_text(), 1..8)) {
        let text = sentences.join(" ");
        let segmented = segment_sentences(&text);
        let mut covered = vec![false; text.len()];
        for s in &segmented {
            prop_assert_eq!(&text[s.char_span.0..s.char_span.1], s.text.as_str());
            covered[s.char_span.0..s.char_span.1].fill(true);
        }
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                prop_assert!(covered[i], "byte {} ({}) uncovered", i, c);
            }
        }
        // Spans strictly increase and never overlap.
        for pair in segmented.windows(2) {
            prop_assert!(pair[0].char_span.1 <= pair[1].char_span.0);
        }
    }

    #[test]
    fn segmentation_is_idempotent(sentences in prop::collection::vec(sentence_text(), 1..8)) {
        let text = sentences.join(" ");
        let first: Vec<String> = segment_sentences(&text).into_iter().map(|s| s.text).collect();
        let rejoined = first.join(" ");
        let second: Vec<String> = segment_sentences(&rejoined).into_iter().map(|s| s.text).collect();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn alignment_never_duplicates_sources(
        sentences in prop::collection::vec(sentence_text(), 2..7),
        order in any::<prop::sample::Index>(),
    ) {
        let text = sentences.join(" ");
        let doc = Document::new("prop", &text);
        // Claim every sentence plus a duplicate, in a rotated order.
        let mut claims: Vec<String> = doc.sentences.iter().map(|s| s.text.clone()).collect();
        claims.push(doc.sentences[0].text.clone());
        let rot = order.index(claims.len());
        claims.rotate_left(rot);
        let result = align_to_document(&claims, &doc, 0.5);
        let mut indices: Vec<usize> = result.matched.iter().map(|m| m.source_index).collect();
        let before = indices.len();
        indices.sort_unstable();
        indices.dedup();
        prop_assert_eq!(indices.len(), before, "duplicate source index in matched set");
    }

    #[test]
    fn greedy_alignment_at_least_half_of_optimal(
        sentences in prop::collection::vec(sentence_text(), 2..6),
        claim_count in 1usize..5,
    ) {
        let text = sentences.join(" ");
        let doc = Document::new("prop", &text);
        let claims: Vec<String> = (0..claim_count)
            .map(|i| doc.sentences[i % doc.sentences.len()].text.clone())
            .collect();
        let threshold = 0.5;
        let greedy = align_to_document(&claims, &doc, threshold).matched.len();

        // Brute-force maximum bipartite matching over the same threshold.
        let sims: Vec<Vec<f64>> = claims
            .iter()
            .map(|c| doc.sentences.iter().map(|s| normalized_similarity(c, &s.text)).collect())
            .collect();
        fn best(sims: &[Vec<f64>], claim: usize, used: &mut Vec<bool>, threshold: f64) -> usize {
            if claim == sims.len() {
                return 0;
            }
            let mut max = best(sims, claim + 1, used, threshold); // skip this claim
            for (s, &sim) in sims[claim].iter().enumerate() {
                if !used[s] && sim >= threshold {
                    used[s] = true;
                    max = max.max(1 + best(sims, claim + 1, used, threshold));
                    used[s] = false;
                }
            }
            max
        }
        let optimal = best(&sims, 0, &mut vec![false; doc.sentences.len()], threshold);
        prop_assert!(
            2 * greedy >= optimal,
            "greedy matched {} but optimal is {}",
            greedy,
            optimal
        );
    }
}

fn corpus_of(n: usize) -> Vec<CorpusEntry> {
    (0..n)
        .map(|i| CorpusEntry {
            id: format!("doc-{i:03}"),
            document: format!("Body text number {i} here."),
            summary: format!("Summary {i}."),
            sentences: None,
        })
        .collect()
}

proptest! {
    #[test]
    fn sampling_is_deterministic_and_ordered(
        size in 1usize..40,
        take_ratio in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let corpus = corpus_of(size);
        let n = ((size as f64) * take_ratio) as usize;
        let a = sample(&corpus, n, seed).unwrap();
        let b = sample(&corpus, n, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n);
        // Original order is preserved and ids are unique.
        let positions: Vec<usize> = a
            .iter()
            .map(|e| corpus.iter().position(|c| c.id == e.id).unwrap())
            .collect();
        for pair in positions.windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn dev_split_partitions_the_corpus(extra in 1usize..30, seed in any::<u64>()) {
        let corpus = corpus_of(50 + extra);
        let (dev, rest) = dev_split(&corpus, seed).unwrap();
        prop_assert_eq!(dev.len(), 50);
        prop_assert_eq!(rest.len(), extra);
        let mut all: Vec<String> = dev.iter().chain(rest.iter()).map(|e| e.id.clone()).collect();
        all.sort();
        let mut expected: Vec<String> = corpus.iter().map(|e| e.id.clone()).collect();
        expected.sort();
        prop_assert_eq!(all, expected);
    }
}
