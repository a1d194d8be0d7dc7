//! Text normalization, word tokenization and n-gram extraction.
//!
//! Every metric in this crate works on [`TokenSeq`] values produced here, so
//! the normalization policy is the single knob that decides what counts as
//! "the same word".

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::metrics::MetricError;

/// How raw text is canonicalized before splitting into words.
///
/// Whitespace runs are always collapsed to single spaces; the flags control
/// everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationPolicy {
    pub lowercase: bool,
    /// Canonical composition (NFC).
    pub unicode_compose: bool,
    /// Punctuation becomes its own token instead of sticking to a word.
    pub split_punct: bool,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        Self {
            lowercase: true,
            unicode_compose: true,
            split_punct: true,
        }
    }
}

impl NormalizationPolicy {
    pub const fn raw() -> Self {
        Self {
            lowercase: false,
            unicode_compose: false,
            split_punct: false,
        }
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace() && !is_combining_mark(c)
}

/// Normalizes `text` under `policy`. The result is idempotent for a fixed
/// policy and its whitespace-split words are exactly the tokens of
/// [`tokenize`].
pub fn normalize(text: &str, policy: &NormalizationPolicy) -> String {
    let mut buf: String = if policy.lowercase {
        text.to_lowercase()
    } else {
        text.to_owned()
    };
    if policy.unicode_compose {
        buf = buf.nfc().collect();
    }
    if policy.split_punct {
        let mut spaced = String::with_capacity(buf.len() + 8);
        for c in buf.chars() {
            if is_punct(c) {
                spaced.push(' ');
                spaced.push(c);
                spaced.push(' ');
            } else {
                spaced.push(c);
            }
        }
        buf = spaced;
    }
    let mut out = String::with_capacity(buf.len());
    for word in buf.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// An ordered sequence of word tokens together with the text it came from.
///
/// Tokens are never empty and never contain whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq {
    tokens: Vec<String>,
    source_text: String,
}

impl TokenSeq {
    /// Builds a sequence from pre-split words. Words are re-split on
    /// whitespace and empties are dropped, so the token invariant holds for
    /// any input.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens: Vec<String> = words
            .into_iter()
            .flat_map(|w| {
                w.as_ref()
                    .split_whitespace()
                    .map(str::to_owned)
                    .collect::<Vec<_>>()
            })
            .collect();
        let source_text = tokens.join(" ");
        Self {
            tokens,
            source_text,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

/// Normalizes and splits `text` on Unicode whitespace. Total over all input.
pub fn tokenize(text: &str, policy: &NormalizationPolicy) -> TokenSeq {
    let normalized = normalize(text, policy);
    TokenSeq {
        tokens: normalized.split_whitespace().map(str::to_owned).collect(),
        source_text: text.to_owned(),
    }
}

/// Multiset of contiguous n-grams, keyed by token slices borrowed from the
/// sequence.
pub type NgramCounts<'a> = HashMap<&'a [String], usize>;

pub fn ngrams(seq: &TokenSeq, n: usize) -> Result<NgramCounts<'_>, MetricError> {
    if n == 0 {
        return Err(MetricError::InvalidNgramOrder);
    }
    let mut counts = NgramCounts::new();
    for gram in seq.tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    Ok(counts)
}
