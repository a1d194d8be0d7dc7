//! Similarity-gated acceptance of rewrites.
//!
//! A rewrite is kept when its similarity to the original reaches the
//! threshold; otherwise the original text is restored. A score exactly equal
//! to the threshold keeps the rewrite.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::metrics::{similarity, MetricError, MetricKind, SimilarityScore};
use crate::text::{tokenize, NormalizationPolicy};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("threshold {0} is outside [0, 1]")]
    GammaOutOfRange(f64),
    #[error("max_attempts must be at least 1")]
    ZeroAttempts,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("all {attempts} rewrite attempts failed; last error: {last}")]
    BackendFailure { attempts: u32, last: GatewayError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub metric: MetricKind,
    pub gamma: f64,
    pub max_attempts: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            metric: MetricKind::EditRate,
            gamma: 0.5,
            max_attempts: 3,
        }
    }
}

impl FilterConfig {
    pub fn new(metric: MetricKind, gamma: f64, max_attempts: u32) -> Result<Self, FilterError> {
        let cfg = Self {
            metric,
            gamma,
            max_attempts,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(FilterError::GammaOutOfRange(self.gamma));
        }
        if self.max_attempts == 0 {
            return Err(FilterError::ZeroAttempts);
        }
        Ok(())
    }
}

/// Outcome of gating one rewrite.
///
/// `chosen_text` is always byte-identical to either the original or the
/// rewrite that was scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub chosen_text: String,
    /// Last rewrite produced, if any attempt succeeded at the backend.
    pub rewritten: Option<String>,
    pub kept_rewrite: bool,
    pub score: Option<SimilarityScore>,
    pub attempts_used: u32,
    /// Attempts whose backend call errored.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub failed_attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl FilterDecision {
    pub fn reverted_with_error(
        original: &str,
        rewritten: Option<String>,
        error: impl ToString,
    ) -> Self {
        Self {
            chosen_text: original.to_owned(),
            rewritten,
            kept_rewrite: false,
            score: None,
            attempts_used: 1,
            failed_attempts: 0,
            error: Some(error.to_string()),
        }
    }
}

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub kept: usize,
    pub reverted: usize,
    pub errors: usize,
    /// Score counts over ten equal bins of `[0, 1]`; 1.0 lands in the last.
    pub histogram: [usize; HISTOGRAM_BINS],
}

impl FilterStats {
    pub fn from_decisions<'a>(decisions: impl IntoIterator<Item = &'a FilterDecision>) -> Self {
        let mut stats = Self::default();
        for d in decisions {
            stats.record(d);
        }
        stats
    }

    pub fn record(&mut self, d: &FilterDecision) {
        self.total += 1;
        if d.kept_rewrite {
            self.kept += 1;
        } else {
            self.reverted += 1;
        }
        if d.error.is_some() {
            self.errors += 1;
        }
        if let Some(score) = d.score {
            let bin = ((score.value * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            self.histogram[bin] += 1;
        }
    }
}

/// Scores `rewritten` against `original` and keeps it unless the score falls
/// below `cfg.gamma`.
pub fn filter_pair(
    original: &str,
    rewritten: &str,
    cfg: &FilterConfig,
    policy: &NormalizationPolicy,
) -> Result<FilterDecision, FilterError> {
    let orig = tokenize(original, policy);
    let rw = tokenize(rewritten, policy);
    let score = similarity(cfg.metric, &rw, &orig)?;
    let kept = score.value >= cfg.gamma;
    Ok(FilterDecision {
        chosen_text: if kept { rewritten } else { original }.to_owned(),
        rewritten: Some(rewritten.to_owned()),
        kept_rewrite: kept,
        score: Some(score),
        attempts_used: 1,
        failed_attempts: 0,
        error: None,
    })
}

/// Gates every pair. Output order matches input order; records whose metric
/// errors are reverted and carry the error message.
pub fn filter_dataset<O, R>(
    pairs: &[(O, R)],
    cfg: &FilterConfig,
    policy: &NormalizationPolicy,
) -> (Vec<FilterDecision>, FilterStats)
where
    O: AsRef<str> + Sync,
    R: AsRef<str> + Sync,
{
    let decisions: Vec<FilterDecision> = pairs
        .par_iter()
        .map(|(o, r)| {
            let (o, r) = (o.as_ref(), r.as_ref());
            filter_pair(o, r, cfg, policy)
                .unwrap_or_else(|e| FilterDecision::reverted_with_error(o, Some(r.to_owned()), e))
        })
        .collect();
    let stats = FilterStats::from_decisions(&decisions);
    (decisions, stats)
}

/// Something that can produce a rewrite. `attempt` starts at 0 and lets the
/// implementation vary its sampling between retries.
pub trait Rewriter {
    fn rewrite(&self, attempt: u32) -> Result<String, GatewayError>;
}

impl<F> Rewriter for F
where
    F: Fn(u32) -> Result<String, GatewayError>,
{
    fn rewrite(&self, attempt: u32) -> Result<String, GatewayError> {
        self(attempt)
    }
}

/// Asks `rewriter` for up to `cfg.max_attempts` rewrites, calling it strictly
/// sequentially, and returns the first one that passes the gate.
///
/// Backend errors before a success are counted in `failed_attempts`. If every
/// attempt errors the call fails; if some rewrites were produced but none
/// passed, the original is restored with `attempts_used == max_attempts`.
pub fn rewrite_with_retries(
    original: &str,
    rewriter: &dyn Rewriter,
    cfg: &FilterConfig,
    policy: &NormalizationPolicy,
) -> Result<FilterDecision, FilterError> {
    cfg.validate()?;
    let mut failed = 0u32;
    let mut last_error = None;
    let mut last_scored: Option<FilterDecision> = None;
    for attempt in 0..cfg.max_attempts {
        let text = match rewriter.rewrite(attempt) {
            Ok(text) => text,
            Err(e) => {
                failed += 1;
                last_error = Some(e);
                continue;
            }
        };
        let mut decision = filter_pair(original, &text, cfg, policy)?;
        decision.attempts_used = attempt + 1;
        decision.failed_attempts = failed;
        if decision.kept_rewrite {
            return Ok(decision);
        }
        last_scored = Some(decision);
    }
    match (last_scored, last_error) {
        (Some(mut decision), _) => {
            decision.attempts_used = cfg.max_attempts;
            decision.failed_attempts = failed;
            Ok(decision)
        }
        (None, Some(last)) => Err(FilterError::BackendFailure {
            attempts: cfg.max_attempts,
            last,
        }),
        (None, None) => unreachable!("max_attempts validated to be at least 1"),
    }
}
