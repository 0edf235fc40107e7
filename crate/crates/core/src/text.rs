//! Deterministic sentence segmentation and tokenization.
//!
//! Everything downstream (ROUGE, oracle labels, alignment) assumes the
//! segmenter and tokenizer are pure functions: the same input always
//! produces byte-identical output. Segmentation is rule-based with a fixed
//! abbreviation list; there is no learned model anywhere in this path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Abbreviations whose trailing period never ends a sentence. Stored
/// lowercase including the final period; matching is case-insensitive.
pub const ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "prof.", "rev.", "gen.", "sen.", "rep.", "gov.", "jr.", "sr.",
    "st.", "mt.", "capt.", "sgt.", "lt.", "col.", "etc.", "e.g.", "i.e.", "cf.", "vs.", "viz.",
    "al.", "inc.", "ltd.", "co.", "corp.", "dept.", "univ.", "assn.", "bros.", "fig.", "figs.",
    "no.", "nos.", "vol.", "vols.", "pp.", "approx.", "est.", "min.", "max.", "a.m.", "p.m.",
    "u.s.", "u.k.", "u.n.", "u.s.a.", "d.c.", "b.c.", "a.d.", "ph.d.", "m.d.", "b.a.", "m.a.",
    "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.",
    "dec.", "mon.", "tue.", "wed.", "thu.", "fri.", "sat.", "sun.",
];

/// One segmented sentence with its location in the source document.
///
/// `char_span` is a half-open byte range `[start, end)` into the original
/// text; `text` equals the document substring at that range with
/// surrounding whitespace already trimmed away.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub char_span: (usize, usize),
}

/// A source document with its segmented, index-stable sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Build a document by running [`segment_sentences`] over `text`.
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let sentences = segment_sentences(&text);
        Self {
            id: id.into(),
            text,
            sentences,
        }
    }

    /// Build a document from externally supplied sentence boundaries
    /// (e.g. dataset-official segmentation). Each sentence must occur in
    /// `text`, in order, as a contiguous substring.
    pub fn with_sentences(
        id: impl Into<String>,
        text: impl Into<String>,
        provided: &[String],
    ) -> Result<Self, TextError> {
        let text = text.into();
        let mut sentences = Vec::with_capacity(provided.len());
        let mut cursor = 0usize;
        for (index, raw) in provided.iter().enumerate() {
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                return Err(TextError::EmptySentence { index });
            }
            match text[cursor..].find(trimmed) {
                Some(rel) => {
                    let start = cursor + rel;
                    let end = start + trimmed.len();
                    sentences.push(Sentence {
                        index,
                        text: trimmed.to_string(),
                        char_span: (start, end),
                    });
                    cursor = end;
                }
                None => return Err(TextError::SentenceNotInDocument { index }),
            }
        }
        Ok(Self {
            id: id.into(),
            text,
            sentences,
        })
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("provided sentence {index} not found in document text (in order)")]
    SentenceNotInDocument { index: usize },
    #[error("provided sentence {index} is empty")]
    EmptySentence { index: usize },
}

/// Tokenizer settings. With the defaults, tokens are lowercased maximal
/// runs of letters and digits; stemming is off and must be enabled
/// explicitly since it changes every downstream score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenConfig {
    pub lowercase: bool,
    pub stemming: bool,
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            stemming: false,
        }
    }
}

fn is_token_char(c: char) -> bool {
    // Letters (L*) and numeric characters. std has no Nd-only predicate;
    // the N* superset differs only on numeral letters and super/subscripts.
    c.is_alphabetic() || c.is_numeric()
}

/// Split `text` into maximal alphanumeric runs, applying the config's
/// lowercasing and stemming. Pure and deterministic.
pub fn tokenize(text: &str, config: &TokenConfig) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if is_token_char(c) {
            if config.lowercase {
                current.extend(c.to_lowercase());
            } else {
                current.push(c);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    if config.stemming {
        tokens.iter_mut().for_each(|t| *t = stem(t));
    }
    tokens
}

/// Light suffix stemmer used only behind the `stemming` flag: strips
/// common plural and verbal endings, nothing more.
fn stem(word: &str) -> String {
    let w = word;
    if w.len() > 4 {
        if let Some(base) = w.strip_suffix("sses") {
            return format!("{base}ss");
        }
        if let Some(base) = w.strip_suffix("ies") {
            return format!("{base}i");
        }
    }
    if w.len() > 6 {
        if let Some(base) = w.strip_suffix("ing") {
            return base.to_string();
        }
    }
    if w.len() > 5 {
        if let Some(base) = w.strip_suffix("ed") {
            return base.to_string();
        }
        if let Some(base) = w.strip_suffix("ly") {
            return base.to_string();
        }
    }
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") {
        return w[..w.len() - 1].to_string();
    }
    w.to_string()
}

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201D}', '\u{2019}'];
const QUOTE_OPENERS: &[char] = &['"', '\'', '\u{201C}', '\u{2018}'];

/// Segment `text` into sentences.
///
/// A boundary is placed after sentence-final punctuation (`.` `!` `?`),
/// optionally followed by closing quotes or brackets, when the next
/// non-whitespace character is an uppercase letter, a digit, or an opening
/// quote. A period does not split when the word before it is a known
/// abbreviation (see [`ABBREVIATIONS`]) or a single letter (an initial).
/// Decimal points never qualify because no whitespace follows them.
///
/// Empty or whitespace-only input yields an empty list.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut boundaries: Vec<usize> = Vec::new(); // byte offsets where a new sentence starts

    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        if c == '.' || c == '!' || c == '?' {
            // Skip closing quotes/brackets directly after the terminal.
            let mut j = i + 1;
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            // Require at least one whitespace character.
            if j < chars.len() && chars[j].1.is_whitespace() {
                let mut k = j;
                while k < chars.len() && chars[k].1.is_whitespace() {
                    k += 1;
                }
                if k < chars.len() {
                    let next = chars[k].1;
                    let opener =
                        next.is_uppercase() || next.is_numeric() || QUOTE_OPENERS.contains(&next);
                    if opener && !(c == '.' && period_is_protected(&chars, i)) {
                        boundaries.push(chars[k].0);
                        i = k;
                        continue;
                    }
                }
            }
        }
        i += 1;
    }

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0usize;
    for b in boundaries {
        spans.push((start, b));
        start = b;
    }
    spans.push((start, text.len()));

    let mut sentences = Vec::new();
    for (s, e) in spans {
        let raw = &text[s..e];
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = raw.len() - raw.trim_start().len();
        let span = (s + lead, s + lead + trimmed.len());
        sentences.push(Sentence {
            index: sentences.len(),
            text: trimmed.to_string(),
            char_span: span,
        });
    }
    sentences
}

/// True when the period at `chars[pos]` belongs to an abbreviation or a
/// single-letter initial rather than ending a sentence.
fn period_is_protected(chars: &[(usize, char)], pos: usize) -> bool {
    // Walk back over the word, allowing internal periods ("p.m", "u.s.a").
    let mut start = pos;
    while start > 0 {
        let prev = chars[start - 1].1;
        if is_token_char(prev) || prev == '.' {
            start -= 1;
        } else {
            break;
        }
    }
    if start == pos {
        return false; // bare period with no word attached
    }
    let word: String = chars[start..=pos].iter().map(|(_, c)| c).collect();
    let lowered = word.to_lowercase();
    if ABBREVIATIONS.contains(&lowered.as_str()) {
        return true;
    }
    // Single-letter initials such as "A." in "A. Dent".
    let body: Vec<char> = word.chars().collect();
    body.len() == 2 && body[0].is_alphabetic()
}
