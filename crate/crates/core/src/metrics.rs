//! Word-level similarity metrics: edit distance and edit rate, BLEU,
//! ROUGE-L, and the unified higher-is-more-similar score used by the filter.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{ngrams, TokenSeq};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("n-gram order must be at least 1")]
    InvalidNgramOrder,
    #[error("edit rate is undefined for an empty source sentence")]
    EmptySource,
    #[error("BLEU needs at least one reference")]
    NoReferences,
    #[error("corpus BLEU needs at least one candidate/reference pair")]
    EmptyCorpus,
    #[error("unknown metric `{0}` (expected editrate, bleu or rougel)")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    EditRate,
    Bleu,
    RougeL,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::EditRate, MetricKind::Bleu, MetricKind::RougeL];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::EditRate => "editrate",
            MetricKind::Bleu => "bleu",
            MetricKind::RougeL => "rougel",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "editrate" => Ok(MetricKind::EditRate),
            "bleu" => Ok(MetricKind::Bleu),
            "rougel" => Ok(MetricKind::RougeL),
            other => Err(MetricError::UnknownMetric(other.to_owned())),
        }
    }
}

/// A similarity in `[0, 1]`, higher meaning closer, plus the metric's raw
/// output. For edit rate the raw value is the distance ratio and may
/// exceed 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub metric: MetricKind,
    pub raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// A zero precision `0/t` becomes `1/(t+1)`.
    AddOneOnZero,
    /// A zero precision becomes [`FLOOR_EPSILON`].
    FloorEpsilon,
}

pub const FLOOR_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceLength {
    /// Reference length closest to the candidate; ties go to the shorter.
    Closest,
    Shortest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
    pub reference_length: ReferenceLength,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing: Smoothing::None,
            reference_length: ReferenceLength::Closest,
        }
    }
}

impl BleuConfig {
    /// Sentence-level variant used when BLEU gates a single rewrite.
    pub fn sentence_filter() -> Self {
        Self {
            smoothing: Smoothing::FloorEpsilon,
            ..Self::default()
        }
    }
}

/// Word-level Levenshtein distance.
///
/// `D(i, j)` is `max(i, j)` when either prefix is empty, copies the diagonal
/// when `s[i] == t[j]`, and is otherwise one plus the minimum of delete,
/// insert and substitute. Computed row by row in `O(|s|·|t|)` time and
/// `O(|t|)` space.
pub fn edit_distance(s: &TokenSeq, t: &TokenSeq) -> usize {
    levenshtein(s.tokens(), t.tokens())
}

pub(crate) fn levenshtein<T: PartialEq>(s: &[T], t: &[T]) -> usize {
    if s.is_empty() || t.is_empty() {
        return s.len().max(t.len());
    }
    let mut prev: Vec<usize> = (0..=t.len()).collect();
    let mut cur = vec![0usize; t.len() + 1];
    for (i, sa) in s.iter().enumerate() {
        cur[0] = i + 1;
        for (j, tb) in t.iter().enumerate() {
            cur[j + 1] = if sa == tb {
                prev[j]
            } else {
                1 + prev[j + 1].min(cur[j]).min(prev[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[t.len()]
}

/// `D(s, t) / |s|`. Not clamped: a long `t` can push this above 1.
pub fn edit_rate(s: &TokenSeq, t: &TokenSeq) -> Result<f64, MetricError> {
    if s.is_empty() {
        return Err(MetricError::EmptySource);
    }
    Ok(edit_distance(s, t) as f64 / s.len() as f64)
}

/// Sufficient statistics for BLEU: clipped matches and candidate n-gram
/// totals per order, plus candidate and effective reference lengths.
/// Corpus BLEU sums these across sentences before scoring.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl BleuStats {
    pub fn accumulate(&mut self, other: &BleuStats) {
        if self.matches.len() < other.matches.len() {
            self.matches.resize(other.matches.len(), 0);
            self.totals.resize(other.totals.len(), 0);
        }
        for (n, (m, t)) in other.matches.iter().zip(&other.totals).enumerate() {
            self.matches[n] += m;
            self.totals[n] += t;
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    /// Geometric mean of the modified precisions times the brevity penalty.
    ///
    /// Orders for which the candidate side has no n-grams at all are left
    /// out of the mean, so a candidate shorter than `max_n` words is scored
    /// on the orders it can actually fill.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0usize;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if t == 0 {
                continue;
            }
            let p = if m > 0 {
                m as f64 / t as f64
            } else {
                match smoothing {
                    Smoothing::None => return 0.0,
                    Smoothing::AddOneOnZero => 1.0 / (t as f64 + 1.0),
                    Smoothing::FloorEpsilon => FLOOR_EPSILON,
                }
            };
            log_sum += p.ln();
            orders += 1;
        }
        if orders == 0 {
            return 0.0;
        }
        let c = self.candidate_len as f64;
        let r = self.reference_len as f64;
        let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        (brevity * (log_sum / orders as f64).exp()).clamp(0.0, 1.0)
    }
}

fn effective_reference_len(
    candidate_len: usize,
    references: &[TokenSeq],
    rule: ReferenceLength,
) -> usize {
    let lens = references.iter().map(TokenSeq::len);
    match rule {
        ReferenceLength::Shortest => lens.min().unwrap_or(0),
        ReferenceLength::Closest => lens
            .min_by_key(|&r| (r.abs_diff(candidate_len), r))
            .unwrap_or(0),
    }
}

/// Clipped n-gram statistics of one candidate against its references.
pub fn bleu_stats(
    candidate: &TokenSeq,
    references: &[TokenSeq],
    cfg: &BleuConfig,
) -> Result<BleuStats, MetricError> {
    if references.is_empty() {
        return Err(MetricError::NoReferences);
    }
    if cfg.max_n == 0 {
        return Err(MetricError::InvalidNgramOrder);
    }
    let mut stats = BleuStats {
        matches: vec![0; cfg.max_n],
        totals: vec![0; cfg.max_n],
        candidate_len: candidate.len() as u64,
        reference_len: effective_reference_len(candidate.len(), references, cfg.reference_length)
            as u64,
    };
    for n in 1..=cfg.max_n {
        let cand = ngrams(candidate, n)?;
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for reference in references {
            for (gram, count) in ngrams(reference, n)? {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        let mut matched = 0usize;
        let mut total = 0usize;
        for (gram, count) in cand {
            total += count;
            matched += count.min(max_ref.get(gram).copied().unwrap_or(0));
        }
        stats.matches[n - 1] = matched as u64;
        stats.totals[n - 1] = total as u64;
    }
    Ok(stats)
}

pub fn bleu(
    candidate: &TokenSeq,
    references: &[TokenSeq],
    cfg: &BleuConfig,
) -> Result<f64, MetricError> {
    Ok(bleu_stats(candidate, references, cfg)?.score(cfg.smoothing))
}

/// Corpus BLEU over aggregated counts (not a mean of sentence scores).
pub fn corpus_bleu(
    pairs: &[(TokenSeq, Vec<TokenSeq>)],
    cfg: &BleuConfig,
) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut total = BleuStats::default();
    for (candidate, references) in pairs {
        total.accumulate(&bleu_stats(candidate, references, cfg)?);
    }
    Ok(total.score(cfg.smoothing))
}

pub fn lcs_length(a: &TokenSeq, b: &TokenSeq) -> usize {
    let (a, b) = (a.tokens(), b.tokens());
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// ROUGE-L from the LCS: `P = lcs/|candidate|`, `R = lcs/|reference|`,
/// `F = (1+β²)PR / (R + β²P)`. Any zero denominator yields zero.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq, beta: f64) -> RougeL {
    if candidate.is_empty() || reference.is_empty() {
        return RougeL::default();
    }
    let lcs = lcs_length(candidate, reference) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let b2 = beta * beta;
    let denom = recall + b2 * precision;
    let f = if denom > 0.0 {
        (1.0 + b2) * precision * recall / denom
    } else {
        0.0
    };
    RougeL {
        precision,
        recall,
        f,
    }
}

/// Similarity of a rewrite to its original, oriented so that higher always
/// means more similar. The original is the edit-rate source and the sole
/// BLEU reference.
pub fn similarity(
    metric: MetricKind,
    candidate: &TokenSeq,
    original: &TokenSeq,
) -> Result<SimilarityScore, MetricError> {
    let (value, raw) = match metric {
        MetricKind::EditRate => {
            let er = edit_rate(original, candidate)?;
            (1.0 - er.min(1.0), er)
        }
        MetricKind::Bleu => {
            let b = bleu(
                candidate,
                std::slice::from_ref(original),
                &BleuConfig::sentence_filter(),
            )?;
            (b, b)
        }
        MetricKind::RougeL => {
            let f = rouge_l(candidate, original, 1.0).f;
            (f, f)
        }
    };
    Ok(SimilarityScore { value, metric, raw })
}
