//! Corpus I/O, back-translation rewrite-dataset construction, fine-tune
//! export and subsampling.
//!
//! All files are JSON Lines: one UTF-8 JSON object per line.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{json_digest, sha256_hex, TOOL_VERSION};
use crate::filtering::{
    rewrite_with_retries, FilterConfig, FilterDecision, FilterError, FilterStats,
};
use crate::gateway::{Gateway, GenerationParams, GenerationRequest, PromptTemplate, TemplateError};
use crate::metrics::{similarity, MetricKind, SimilarityScore};
use crate::text::{tokenize, NormalizationPolicy};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: duplicate id `{id}` (first seen on line {first_line})", path.display())]
    DuplicateId {
        path: PathBuf,
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("record `{id}` has an empty target")]
    EmptyTarget { id: String },
    #[error("nothing to export: record list is empty")]
    EmptyInput,
    #[error("sample size {n} is outside 1..={len}")]
    SampleSize { n: usize, len: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelRecord {
    pub id: String,
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ParallelRecord {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        target: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            target: target.into(),
            domain: String::new(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

/// One row of the rewrite dataset: original `x`, rewrite `r`, and the text
/// `R` that the similarity gate chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub id: String,
    pub original: String,
    pub rewritten: Option<String>,
    pub chosen: String,
    #[serde(default)]
    pub scores: BTreeMap<MetricKind, SimilarityScore>,
    pub kept: bool,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RewriteRecord {
    pub fn from_decision(
        id: &str,
        original: &str,
        decision: FilterDecision,
        policy: &NormalizationPolicy,
    ) -> Self {
        let mut scores = BTreeMap::new();
        if let Some(rw) = &decision.rewritten {
            let (o, r) = (tokenize(original, policy), tokenize(rw, policy));
            for metric in MetricKind::ALL {
                if let Ok(s) = similarity(metric, &r, &o) {
                    scores.insert(metric, s);
                }
            }
        }
        Self {
            id: id.to_owned(),
            original: original.to_owned(),
            rewritten: decision.rewritten,
            chosen: decision.chosen_text,
            scores,
            kept: decision.kept_rewrite,
            attempts: decision.attempts_used,
            error: decision.error,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.chosen == self.original
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.to_owned(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Loads a parallel corpus in file order, rejecting empty ids or sources
/// and duplicate ids.
pub fn load_corpus(path: &Path) -> Result<Vec<ParallelRecord>, DatasetError> {
    let rows: Vec<(usize, ParallelRecord)> = read_jsonl(path)?;
    let mut seen: HashMap<String, usize> = HashMap::with_capacity(rows.len());
    let mut records = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let invalid = |message: &str| DatasetError::Parse {
            path: path.to_owned(),
            line,
            message: message.to_owned(),
        };
        if rec.id.is_empty() {
            return Err(invalid("empty `id`"));
        }
        if rec.source.trim().is_empty() {
            return Err(invalid("empty `source`"));
        }
        if let Some(&first_line) = seen.get(&rec.id) {
            return Err(DatasetError::DuplicateId {
                path: path.to_owned(),
                id: rec.id,
                line,
                first_line,
            });
        }
        seen.insert(rec.id.clone(), line);
        records.push(rec);
    }
    Ok(records)
}

pub fn write_corpus(path: &Path, records: &[ParallelRecord]) -> Result<(), DatasetError> {
    write_jsonl(path, records)
}

pub fn load_rewrites(path: &Path) -> Result<Vec<RewriteRecord>, DatasetError> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_rewrites(path: &Path, records: &[RewriteRecord]) -> Result<(), DatasetError> {
    write_jsonl(path, records)
}

/// Digest over the records' canonical JSON lines.
pub fn corpus_digest(records: &[ParallelRecord]) -> String {
    let mut buf = Vec::new();
    for r in records {
        buf.extend_from_slice(
            serde_json::to_string(r)
                .expect("record serializes")
                .as_bytes(),
        );
        buf.push(b'\n');
    }
    sha256_hex(&buf)
}

pub(crate) fn thread_pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool")
}

/// Builds the rewrite dataset: each record's target is back-translated into
/// the source language, scored against the original source, and gated.
///
/// Retries re-sample with `params.seed + attempt`. Backend failures turn the
/// record into a reverted row carrying the error; the job continues.
pub fn build_backtranslation_pairs(
    corpus: &[ParallelRecord],
    gateway: &Gateway,
    template: &PromptTemplate,
    params: &GenerationParams,
    cfg: &FilterConfig,
    policy: &NormalizationPolicy,
) -> Result<Vec<RewriteRecord>, DatasetError> {
    cfg.validate()?;
    template.validate()?;
    if let Some(rec) = corpus.iter().find(|r| r.target.trim().is_empty()) {
        return Err(DatasetError::EmptyTarget { id: rec.id.clone() });
    }
    let pool = thread_pool(gateway.max_inflight());
    let records = pool.install(|| {
        corpus
            .par_iter()
            .map(|rec| {
                let rewriter = |attempt: u32| {
                    let req = GenerationRequest::from_template(
                        template,
                        &rec.target,
                        rec.label.as_deref(),
                        params,
                    )
                    .map_err(|e| crate::gateway::GatewayError::InvalidRequest(e.to_string()))?
                    .with_seed(params.seed.wrapping_add(attempt as u64));
                    gateway.cached_generate(&req)
                };
                let decision = rewrite_with_retries(&rec.source, &rewriter, cfg, policy)
                    .unwrap_or_else(|e| FilterDecision {
                        attempts_used: cfg.max_attempts,
                        ..FilterDecision::reverted_with_error(&rec.source, None, e)
                    });
                RewriteRecord::from_decision(&rec.id, &rec.source, decision, policy)
            })
            .collect()
    });
    Ok(records)
}

/// Filter statistics of a rewrite dataset under `metric`'s scores.
pub fn rewrite_stats(records: &[RewriteRecord], metric: MetricKind) -> FilterStats {
    let mut stats = FilterStats::default();
    for r in records {
        stats.record(&FilterDecision {
            chosen_text: String::new(),
            rewritten: None,
            kept_rewrite: r.kept,
            score: r.scores.get(&metric).copied(),
            attempts_used: r.attempts,
            failed_attempts: 0,
            error: r.error.clone(),
        });
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDirection {
    /// input = original, output = chosen text.
    #[default]
    OriginalToRewrite,
    /// input = chosen text, output = original.
    RewriteToOriginal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetunePair {
    pub id: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExportCounts {
    pub written: usize,
    pub dropped: usize,
}

/// Writes training pairs for an external seq2seq trainer. Identity pairs
/// (the gate restored the original) are dropped unless `include_identity`.
pub fn export_finetune(
    records: &[RewriteRecord],
    path: &Path,
    include_identity: bool,
    direction: PairDirection,
) -> Result<ExportCounts, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let pairs: Vec<FinetunePair> = records
        .iter()
        .filter(|r| include_identity || !r.is_identity())
        .map(|r| {
            let (input, output) = match direction {
                PairDirection::OriginalToRewrite => (&r.original, &r.chosen),
                PairDirection::RewriteToOriginal => (&r.chosen, &r.original),
            };
            FinetunePair {
                id: r.id.clone(),
                input: input.clone(),
                output: output.clone(),
            }
        })
        .collect();
    write_jsonl(path, &pairs)?;
    Ok(ExportCounts {
        written: pairs.len(),
        dropped: records.len() - pairs.len(),
    })
}

/// Uniform sample of `n` records without replacement, deterministic per
/// `seed`, in original relative order.
pub fn subsample(
    corpus: &[ParallelRecord],
    n: usize,
    seed: u64,
) -> Result<Vec<ParallelRecord>, DatasetError> {
    if n == 0 || n > corpus.len() {
        return Err(DatasetError::SampleSize {
            n,
            len: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, corpus.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| corpus[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub sources: Vec<String>,
    pub record_count: usize,
    pub corpus_digest: String,
    pub policy: NormalizationPolicy,
    pub backend_digest: String,
    pub config_digest: String,
    pub tool_version: String,
}

impl CorpusManifest {
    pub fn new<B: Serialize, C: Serialize>(
        sources: &[&Path],
        records: &[ParallelRecord],
        policy: NormalizationPolicy,
        backend: &B,
        config: &C,
    ) -> Self {
        Self {
            sources: sources.iter().map(|p| p.display().to_string()).collect(),
            record_count: records.len(),
            corpus_digest: corpus_digest(records),
            policy,
            backend_digest: json_digest(backend),
            config_digest: json_digest(config),
            tool_version: TOOL_VERSION.to_owned(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let body = serde_json::to_vec_pretty(self).expect("manifest serializes");
        std::fs::write(path, body).map_err(io_err(path))
    }
}
