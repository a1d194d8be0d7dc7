//! Inference-time orchestration (rewrite, gate, then the task model) and the
//! evaluation harness: reports, threshold sweeps and origin/rewrite deltas.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{corpus_digest, thread_pool, ParallelRecord};
use crate::digest::{json_digest, TOOL_VERSION};
use crate::filtering::{rewrite_with_retries, FilterConfig, FilterError, FilterStats};
use crate::gateway::{
    BackendSpec, Gateway, GatewayError, GenerationParams, GenerationRequest, PromptTemplate,
    TemplateError, TemplateTask, DEFAULT_MAX_INFLIGHT,
};
use crate::metrics::{
    bleu_stats, edit_rate, rouge_l, BleuConfig, BleuStats, MetricKind, SimilarityScore, Smoothing,
};
use crate::text::{tokenize, NormalizationPolicy, TokenSeq};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("outcome {index} has id `{found}` but corpus record {index} is `{expected}`")]
    Misaligned {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("{count} outcomes for a corpus of {len} records")]
    LengthMismatch { count: usize, len: usize },
    #[error("reports differ in {what}: `{a}` vs `{b}`")]
    DigestMismatch {
        what: &'static str,
        a: String,
        b: String,
    },
    #[error("report aggregates do not match its per-record table: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Translate,
    Summarize,
    Classify,
}

impl Task {
    pub fn is_generation(self) -> bool {
        !matches!(self, Task::Classify)
    }

    pub fn default_template(self) -> PromptTemplate {
        match self {
            Task::Translate => PromptTemplate::translate(),
            Task::Summarize => PromptTemplate::summarize(),
            Task::Classify => PromptTemplate::classify(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewriteMode {
    #[serde(rename = "none")]
    None,
    /// A dedicated rewriting model behind the rewriter backend.
    #[serde(rename = "rewriter")]
    TrainedRewriter,
    /// The task model rewrites its own input through a rewrite prompt.
    #[serde(rename = "self")]
    SelfRewrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Origin,
    Rewrite,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoleConfig {
    pub backend: BackendSpec,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TemplateOverrides {
    pub task: Option<PromptTemplate>,
    /// Prompt sent to the rewriter. Defaults to the bare input for a trained
    /// rewriter and to the label-specific self-rewrite prompt otherwise.
    pub rewrite: Option<PromptTemplate>,
    pub back_translate: Option<PromptTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub rewrite_mode: RewriteMode,
    /// Apply the similarity gate at inference time. When off, the first
    /// rewrite is used as is.
    pub gate: bool,
    pub filter: FilterConfig,
    pub policy: NormalizationPolicy,
    pub rewriter: RoleConfig,
    pub task_llm: RoleConfig,
    pub templates: TemplateOverrides,
    pub labels: Vec<String>,
    pub seed: u64,
    #[serde(skip)]
    pub max_inflight: usize,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Translate,
            rewrite_mode: RewriteMode::TrainedRewriter,
            gate: true,
            filter: FilterConfig::default(),
            policy: NormalizationPolicy::default(),
            rewriter: RoleConfig {
                backend: BackendSpec::MockIdentity,
                params: GenerationParams {
                    model_name: "rewriter".into(),
                    ..GenerationParams::default()
                },
            },
            task_llm: RoleConfig {
                backend: BackendSpec::MockIdentity,
                params: GenerationParams {
                    model_name: "task".into(),
                    ..GenerationParams::default()
                },
            },
            templates: TemplateOverrides::default(),
            labels: vec!["positive".into(), "negative".into()],
            seed: 0,
            max_inflight: DEFAULT_MAX_INFLIGHT,
            cache_dir: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Digest of everything that can change outputs. Runtime locations and
    /// parallelism are excluded.
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn variant(&self) -> Variant {
        match self.rewrite_mode {
            RewriteMode::None => Variant::Origin,
            _ => Variant::Rewrite,
        }
    }

    pub fn task_template(&self) -> PromptTemplate {
        self.templates
            .task
            .clone()
            .unwrap_or_else(|| self.task.default_template())
    }

    pub fn back_translate_template(&self) -> PromptTemplate {
        self.templates
            .back_translate
            .clone()
            .unwrap_or_else(PromptTemplate::back_translate)
    }

    fn role_params(&self, role: &RoleConfig) -> GenerationParams {
        GenerationParams {
            seed: self.seed,
            ..role.params.clone()
        }
    }

    pub fn rewriter_params(&self) -> GenerationParams {
        match self.rewrite_mode {
            RewriteMode::SelfRewrite => self.role_params(&self.task_llm),
            _ => self.role_params(&self.rewriter),
        }
    }

    pub fn task_params(&self) -> GenerationParams {
        self.role_params(&self.task_llm)
    }

    fn effective_filter(&self) -> FilterConfig {
        if self.gate {
            self.filter
        } else {
            FilterConfig {
                gamma: 0.0,
                max_attempts: 1,
                ..self.filter
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.filter.validate()?;
        self.task_template().validate()?;
        if let Some(t) = &self.templates.rewrite {
            t.validate()?;
        }
        self.back_translate_template().validate()?;
        Ok(())
    }
}

/// Rewriter and task-model gateways for one run.
#[derive(Debug)]
pub struct Gateways {
    pub rewriter: Gateway,
    pub task: Gateway,
}

impl Gateways {
    /// In self-rewrite mode the rewriter gateway talks to the task backend.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, GatewayError> {
        let cache = cfg.cache_dir.as_deref();
        let rewriter_spec = match cfg.rewrite_mode {
            RewriteMode::SelfRewrite => &cfg.task_llm.backend,
            _ => &cfg.rewriter.backend,
        };
        Ok(Self {
            rewriter: Gateway::from_spec(rewriter_spec, cache, cfg.max_inflight)?,
            task: Gateway::from_spec(&cfg.task_llm.backend, cache, cfg.max_inflight)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteTrace {
    pub kept: bool,
    pub score: Option<SimilarityScore>,
    pub attempts: u32,
    #[serde(default)]
    pub failed_attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub id: String,
    pub original_input: String,
    /// Text the task model actually saw.
    pub effective_input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<RewriteTrace>,
    pub llm_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RecordOutcome {
    pub fn failed(&self) -> bool {
        self.llm_output.is_none()
    }
}

fn identity_template() -> PromptTemplate {
    PromptTemplate::new("rewrite_input", "{input}", TemplateTask::RewriteSelf)
}

fn process_record(
    rec: &ParallelRecord,
    cfg: &RunConfig,
    filter: &FilterConfig,
    gateways: &Gateways,
    task_template: &PromptTemplate,
) -> RecordOutcome {
    let mut outcome = RecordOutcome {
        id: rec.id.clone(),
        original_input: rec.source.clone(),
        effective_input: rec.source.clone(),
        rewrite: None,
        llm_output: None,
        error: None,
    };
    if cfg.rewrite_mode != RewriteMode::None {
        let template = match (&cfg.templates.rewrite, cfg.rewrite_mode) {
            (Some(t), _) => t.clone(),
            (None, RewriteMode::SelfRewrite) => {
                PromptTemplate::self_rewrite_for(rec.label.as_deref())
            }
            (None, _) => identity_template(),
        };
        let params = cfg.rewriter_params();
        let hint = rec.label.as_deref();
        if let Err(e) = GenerationRequest::from_template(&template, &rec.source, hint, &params) {
            outcome.error = Some(e.to_string());
            return outcome;
        }
        let rewriter = |attempt: u32| {
            let req = GenerationRequest::from_template(&template, &rec.source, hint, &params)
                .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?
                .with_seed(params.seed.wrapping_add(attempt as u64));
            gateways.rewriter.cached_generate(&req)
        };
        match rewrite_with_retries(&rec.source, &rewriter, filter, &cfg.policy) {
            Ok(d) => {
                outcome.effective_input = d.chosen_text;
                outcome.rewrite = Some(RewriteTrace {
                    kept: d.kept_rewrite,
                    score: d.score,
                    attempts: d.attempts_used,
                    failed_attempts: d.failed_attempts,
                    error: d.error,
                });
            }
            Err(FilterError::Metric(e)) => {
                outcome.rewrite = Some(RewriteTrace {
                    kept: false,
                    score: None,
                    attempts: 1,
                    failed_attempts: 0,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        }
    }
    let task_req = GenerationRequest::from_template(
        task_template,
        &outcome.effective_input,
        None,
        &cfg.task_params(),
    );
    match task_req
        .map_err(PipelineError::from)
        .and_then(|r| Ok(gateways.task.cached_generate(&r)?))
    {
        Ok(text) => outcome.llm_output = Some(text),
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome
}

/// Runs every record through the optional rewrite-and-gate step and then the
/// task model. Output order follows the corpus; record failures are kept in
/// the outcome instead of aborting.
pub fn run_inference(
    corpus: &[ParallelRecord],
    cfg: &RunConfig,
    gateways: &Gateways,
) -> Result<Vec<RecordOutcome>, PipelineError> {
    cfg.validate()?;
    let filter = cfg.effective_filter();
    let task_template = cfg.task_template();
    let pool = thread_pool(gateways.task.max_inflight());
    Ok(pool.install(|| {
        corpus
            .par_iter()
            .map(|rec| process_record(rec, cfg, &filter, gateways, &task_template))
            .collect()
    }))
}

/// Finds the single label mentioned in `output` (case-insensitive, whole
/// words). Zero or several matches yield `None`.
pub fn parse_label(output: &str, label_set: &[String]) -> Option<String> {
    let policy = NormalizationPolicy::default();
    let words = tokenize(output, &policy);
    let mut found = label_set.iter().filter(|label| {
        let needle = tokenize(label, &policy);
        !needle.is_empty()
            && words
                .tokens()
                .windows(needle.len())
                .any(|w| w == needle.tokens())
    });
    match (found.next(), found.next()) {
        (Some(label), None) => Some(label.clone()),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordRow {
    pub id: String,
    pub effective_input: String,
    pub llm_output: Option<String>,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite_kept: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu: Option<BleuStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
    #[serde(default)]
    pub parse_failure: bool,
}

/// Corpus-level numbers. Generation tasks fill BLEU, mean edit rate, mean
/// ROUGE-L F, accuracy as the exact-match rate and F1 as mean bag-of-words
/// token F1. Classification fills accuracy and macro-F1 only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub bleu: Option<f64>,
    pub edit_rate: Option<f64>,
    pub rouge_l: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub exact_matches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub records: usize,
    pub evaluated: usize,
    pub failed: usize,
    pub parse_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub variant: Variant,
    pub corpus_digest: String,
    pub config_digest: String,
    pub labels: Vec<String>,
    pub aggregates: Aggregates,
    pub counts: Counts,
    pub filter_stats: Option<FilterStats>,
    pub records: Vec<RecordRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn token_f1(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return if candidate.is_empty() && reference.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for t in reference.tokens() {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in candidate.tokens() {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / candidate.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Unweighted mean of per-label F1. A missing prediction counts against the
/// gold label's recall only.
pub fn macro_f1(pairs: &[(String, Option<String>)], labels: &[String]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let per_label = labels.iter().map(|label| {
        let tp = pairs
            .iter()
            .filter(|(g, p)| g == label && p.as_ref() == Some(label))
            .count() as f64;
        let predicted = pairs
            .iter()
            .filter(|(_, p)| p.as_ref() == Some(label))
            .count() as f64;
        let actual = pairs.iter().filter(|(g, _)| g == label).count() as f64;
        if tp == 0.0 {
            return 0.0;
        }
        let (p, r) = (tp / predicted, tp / actual);
        2.0 * p * r / (p + r)
    });
    per_label.sum::<f64>() / labels.len() as f64
}

fn aggregate_rows(task: Task, rows: &[RecordRow], labels: &[String]) -> (Aggregates, Counts) {
    let live: Vec<&RecordRow> = rows.iter().filter(|r| !r.failed).collect();
    let counts = Counts {
        records: rows.len(),
        evaluated: live.len(),
        failed: rows.len() - live.len(),
        parse_failures: live.iter().filter(|r| r.parse_failure).count(),
    };
    let mut agg = Aggregates::default();
    if live.is_empty() {
        return (agg, counts);
    }
    if task.is_generation() {
        let mut stats = BleuStats::default();
        for r in &live {
            if let Some(s) = &r.bleu {
                stats.accumulate(s);
            }
        }
        agg.bleu = Some(stats.score(Smoothing::None));
        agg.edit_rate = mean(live.iter().filter_map(|r| r.edit_rate));
        agg.rouge_l = mean(live.iter().filter_map(|r| r.rouge_l));
        agg.exact_matches = live.iter().filter(|r| r.exact_match == Some(true)).count();
        agg.accuracy = Some(agg.exact_matches as f64 / live.len() as f64);
        agg.f1 = mean(live.iter().filter_map(|r| r.token_f1));
    } else {
        let pairs: Vec<(String, Option<String>)> = live
            .iter()
            .map(|r| (r.gold.clone().unwrap_or_default(), r.predicted.clone()))
            .collect();
        agg.exact_matches = pairs.iter().filter(|(g, p)| p.as_ref() == Some(g)).count();
        agg.accuracy = Some(agg.exact_matches as f64 / live.len() as f64);
        agg.f1 = Some(macro_f1(&pairs, labels));
    }
    (agg, counts)
}

/// Scores outcomes against the corpus references. Failed records are
/// excluded from aggregates and counted.
pub fn evaluate(
    outcomes: &[RecordOutcome],
    corpus: &[ParallelRecord],
    cfg: &RunConfig,
) -> Result<EvalReport, PipelineError> {
    if outcomes.len() != corpus.len() {
        return Err(PipelineError::LengthMismatch {
            count: outcomes.len(),
            len: corpus.len(),
        });
    }
    let policy = &cfg.policy;
    let bleu_cfg = BleuConfig::default();
    let mut rows = Vec::with_capacity(outcomes.len());
    for (index, (out, rec)) in outcomes.iter().zip(corpus).enumerate() {
        if out.id != rec.id {
            return Err(PipelineError::Misaligned {
                index,
                expected: rec.id.clone(),
                found: out.id.clone(),
            });
        }
        let mut row = RecordRow {
            id: out.id.clone(),
            effective_input: out.effective_input.clone(),
            llm_output: out.llm_output.clone(),
            failed: out.failed(),
            rewrite_kept: out.rewrite.as_ref().map(|r| r.kept),
            ..RecordRow::default()
        };
        if let Some(text) = &out.llm_output {
            if cfg.task.is_generation() {
                let cand = tokenize(text, policy);
                let reference = tokenize(&rec.target, policy);
                row.bleu = Some(
                    bleu_stats(&cand, std::slice::from_ref(&reference), &bleu_cfg)
                        .expect("one reference"),
                );
                row.edit_rate = edit_rate(&reference, &cand).ok();
                row.rouge_l = Some(rouge_l(&cand, &reference, 1.0).f);
                row.exact_match = Some(cand.tokens() == reference.tokens());
                row.token_f1 = Some(token_f1(&cand, &reference));
            } else {
                row.gold = Some(rec.label.clone().unwrap_or_else(|| rec.target.clone()));
                row.predicted = parse_label(text, &cfg.labels);
                row.parse_failure = row.predicted.is_none();
            }
        }
        rows.push(row);
    }
    let (aggregates, counts) = aggregate_rows(cfg.task, &rows, &cfg.labels);
    let traces: Vec<&RewriteTrace> = outcomes.iter().filter_map(|o| o.rewrite.as_ref()).collect();
    let filter_stats = (!traces.is_empty()).then(|| {
        let mut stats = FilterStats::default();
        for t in traces {
            stats.record(&crate::filtering::FilterDecision {
                chosen_text: String::new(),
                rewritten: None,
                kept_rewrite: t.kept,
                score: t.score,
                attempts_used: t.attempts,
                failed_attempts: t.failed_attempts,
                error: t.error.clone(),
            });
        }
        stats
    });
    let report = EvalReport {
        task: cfg.task,
        variant: cfg.variant(),
        corpus_digest: corpus_digest(corpus),
        config_digest: cfg.digest(),
        labels: cfg.labels.clone(),
        aggregates,
        counts,
        filter_stats,
        records: rows,
    };
    report.verify()?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl EvalReport {
    /// Recomputes aggregates from the per-record table and checks they match.
    pub fn verify(&self) -> Result<(), PipelineError> {
        let (agg, counts) = aggregate_rows(self.task, &self.records, &self.labels);
        if agg != self.aggregates {
            return Err(PipelineError::Inconsistent(format!(
                "{agg:?} != {:?}",
                self.aggregates
            )));
        }
        if counts != self.counts {
            return Err(PipelineError::Inconsistent(format!(
                "{counts:?} != {:?}",
                self.counts
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, PipelineError> {
        self.verify()?;
        Ok(serde_json::to_string_pretty(self).expect("report serializes") + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        let a = &self.aggregates;
        let c = &self.counts;
        let mut out = String::new();
        let variant = match self.variant {
            Variant::Origin => "origin",
            Variant::Rewrite => "rewrite",
        };
        let _ = writeln!(out, "task      {:?}", self.task);
        let _ = writeln!(out, "variant   {variant}");
        let _ = writeln!(out, "corpus    {}", self.corpus_digest);
        let _ = writeln!(out, "config    {}", self.config_digest);
        let _ = writeln!(
            out,
            "records   {} evaluated, {} failed, {} parse failures",
            c.evaluated, c.failed, c.parse_failures
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>10} {:>8} {:>9} {:>8}",
            "variant", "bleu", "edit_rate", "rouge_l", "accuracy", "f1"
        );
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>10} {:>8} {:>9} {:>8}",
            variant,
            fmt_opt(a.bleu),
            fmt_opt(a.edit_rate),
            fmt_opt(a.rouge_l),
            fmt_opt(a.accuracy),
            fmt_opt(a.f1)
        );
        if let Some(s) = &self.filter_stats {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "filter    {} total, {} kept, {} reverted, {} errors",
                s.total, s.kept, s.reverted, s.errors
            );
            let bins: Vec<String> = s.histogram.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "histogram {}", bins.join(" "));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub corpus_digest: String,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(cfg: &RunConfig, corpus: &[ParallelRecord]) -> Self {
        Self {
            config_digest: cfg.digest(),
            corpus_digest: corpus_digest(corpus),
            tool_version: TOOL_VERSION.to_owned(),
        }
    }
}

pub const SWEEP_HEADER: [&str; 7] = [
    "metric",
    "gamma",
    "bleu",
    "edit_rate",
    "rouge_l",
    "accuracy",
    "f1",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// `None` marks the origin baseline.
    pub metric: Option<MetricKind>,
    pub gamma: Option<f64>,
    pub aggregates: Option<Aggregates>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

fn csv_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepTable {
    pub fn baseline(&self) -> &SweepRow {
        &self.rows[0]
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SWEEP_HEADER).expect("in-memory write");
        for row in &self.rows {
            let a = row.aggregates.clone().unwrap_or_default();
            w.write_record([
                row.metric
                    .map(|m| m.name().to_owned())
                    .unwrap_or_else(|| "origin".into()),
                csv_num(row.gamma),
                csv_num(a.bleu),
                csv_num(a.edit_rate),
                csv_num(a.rouge_l),
                csv_num(a.accuracy),
                csv_num(a.f1),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

fn run_and_evaluate(
    corpus: &[ParallelRecord],
    cfg: &RunConfig,
    gateways: &Gateways,
) -> Result<EvalReport, PipelineError> {
    let outcomes = run_inference(corpus, cfg, gateways)?;
    evaluate(&outcomes, corpus, cfg)
}

/// Origin baseline plus one gated rewrite run per `(metric, gamma)` cell.
/// A failing cell records its error and the sweep continues.
pub fn sweep_thresholds(
    corpus: &[ParallelRecord],
    cfg: &RunConfig,
    gateways: &Gateways,
    metrics: &[MetricKind],
    gammas: &[f64],
) -> SweepTable {
    let to_row = |metric, gamma, result: Result<EvalReport, PipelineError>| match result {
        Ok(r) => SweepRow {
            metric,
            gamma,
            aggregates: Some(r.aggregates),
            error: None,
        },
        Err(e) => SweepRow {
            metric,
            gamma,
            aggregates: None,
            error: Some(e.to_string()),
        },
    };
    let baseline_cfg = RunConfig {
        rewrite_mode: RewriteMode::None,
        ..cfg.clone()
    };
    let mut rows = vec![to_row(
        None,
        None,
        run_and_evaluate(corpus, &baseline_cfg, gateways),
    )];
    let mode = match cfg.rewrite_mode {
        RewriteMode::None => RewriteMode::TrainedRewriter,
        m => m,
    };
    for &metric in metrics {
        for &gamma in gammas {
            let cell = RunConfig {
                rewrite_mode: mode,
                gate: true,
                filter: FilterConfig {
                    metric,
                    gamma,
                    ..cfg.filter
                },
                ..cfg.clone()
            };
            rows.push(to_row(
                Some(metric),
                Some(gamma),
                run_and_evaluate(corpus, &cell, gateways),
            ));
        }
    }
    SweepTable { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub metric: &'static str,
    pub origin: f64,
    pub rewrite: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    pub fn get(&self, metric: &str) -> Option<&DeltaRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "origin", "rewrite", "delta"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.metric.to_owned(),
                r.origin.to_string(),
                r.rewrite.to_string(),
                r.delta.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<10} {:>10} {:>10} {:>10}\n",
            "metric", "origin", "rewrite", "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>10.4} {:>10.4} {:>+10.4}",
                r.metric, r.origin, r.rewrite, r.delta
            );
        }
        out
    }
}

/// Signed per-metric differences `b - a` for metrics present in both.
pub fn compare_origin_rewrite(a: &EvalReport, b: &EvalReport) -> Result<DeltaTable, PipelineError> {
    if a.corpus_digest != b.corpus_digest {
        return Err(PipelineError::DigestMismatch {
            what: "corpus",
            a: a.corpus_digest.clone(),
            b: b.corpus_digest.clone(),
        });
    }
    if a.task != b.task {
        return Err(PipelineError::DigestMismatch {
            what: "task",
            a: format!("{:?}", a.task),
            b: format!("{:?}", b.task),
        });
    }
    let (x, y) = (&a.aggregates, &b.aggregates);
    let pairs = [
        ("bleu", x.bleu, y.bleu),
        ("edit_rate", x.edit_rate, y.edit_rate),
        ("rouge_l", x.rouge_l, y.rouge_l),
        ("accuracy", x.accuracy, y.accuracy),
        ("f1", x.f1, y.f1),
    ];
    let rows = pairs
        .into_iter()
        .filter_map(|(metric, o, r)| {
            let (origin, rewrite) = (o?, r?);
            Some(DeltaRow {
                metric,
                origin,
                rewrite,
                delta: rewrite - origin,
            })
        })
        .collect();
    Ok(DeltaTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        vec!["positive".into(), "negative".into()]
    }

    #[test]
    fn parse_label_examples() {
        assert_eq!(
            parse_label("The sentiment is positive.", &labels()).as_deref(),
            Some("positive")
        );
        assert_eq!(
            parse_label("NEGATIVE!", &labels()).as_deref(),
            Some("negative")
        );
        assert_eq!(parse_label("positive or negative", &labels()), None);
        assert_eq!(parse_label("I cannot tell", &labels()), None);
        assert_eq!(parse_label("positively", &labels()), None);
    }

    #[test]
    fn macro_f1_by_hand() {
        // gold:      P P N N
        // predicted: P P N P
        let pairs = vec![
            ("positive".to_string(), Some("positive".to_string())),
            ("positive".to_string(), Some("positive".to_string())),
            ("negative".to_string(), Some("negative".to_string())),
            ("negative".to_string(), Some("positive".to_string())),
        ];
        // positive: P = 2/3, R = 1, F1 = 0.8; negative: P = 1, R = 1/2, F1 = 2/3
        let expected = (0.8 + 2.0 / 3.0) / 2.0;
        assert!((macro_f1(&pairs, &labels()) - expected).abs() < 1e-12);
    }

    #[test]
    fn token_f1_counts_multiset_overlap() {
        let a = TokenSeq::from_words(["a", "a", "b"]);
        let b = TokenSeq::from_words(["a", "c"]);
        // overlap 1, P = 1/3, R = 1/2
        assert!((token_f1(&a, &b) - 0.4).abs() < 1e-12);
        assert_eq!(token_f1(&TokenSeq::default(), &TokenSeq::default()), 1.0);
    }

    fn fixture(task: Task, bleu: f64) -> EvalReport {
        EvalReport {
            task,
            variant: Variant::Origin,
            corpus_digest: "c".into(),
            config_digest: "x".into(),
            labels: vec![],
            aggregates: Aggregates {
                bleu: Some(bleu),
                edit_rate: Some(0.63),
                ..Aggregates::default()
            },
            counts: Counts::default(),
            filter_stats: None,
            records: vec![],
        }
    }

    #[test]
    fn compare_identical_reports_is_zero() {
        let a = fixture(Task::Translate, 0.3);
        let d = compare_origin_rewrite(&a, &a).unwrap();
        assert_eq!(d.rows.len(), 2);
        assert!(d.rows.iter().all(|r| r.delta == 0.0));
    }

    #[test]
    fn compare_rejects_other_corpus_or_task() {
        let a = fixture(Task::Translate, 0.3);
        let mut b = a.clone();
        b.corpus_digest = "other".into();
        assert!(matches!(
            compare_origin_rewrite(&a, &b),
            Err(PipelineError::DigestMismatch { what: "corpus", .. })
        ));
        let c = fixture(Task::Summarize, 0.3);
        assert!(matches!(
            compare_origin_rewrite(&a, &c),
            Err(PipelineError::DigestMismatch { what: "task", .. })
        ));
    }

    #[test]
    fn delta_text_shows_sign() {
        let d = compare_origin_rewrite(
            &fixture(Task::Translate, 31.67),
            &fixture(Task::Translate, 34.57),
        )
        .unwrap();
        assert!(d.to_text().contains("+2.9000"));
        assert!(d.to_csv().starts_with("metric,origin,rewrite,delta\n"));
    }
}
