//! The `roi` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or config error, 3 backend
//! error. Diagnostics go to stderr; data goes to files or stdout.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use roi_core::dataset::{
    build_backtranslation_pairs, export_finetune, load_corpus, load_rewrites, read_jsonl,
    subsample, write_corpus, write_jsonl, write_rewrites, CorpusManifest, DatasetError,
    PairDirection, ParallelRecord, RewriteRecord,
};
use roi_core::filtering::{filter_dataset, FilterStats};
use roi_core::gateway::{GatewayError, GatewayStats, ResponseCache};
use roi_core::metrics::MetricKind;
use roi_core::pipeline::{
    compare_origin_rewrite, evaluate, run_inference, sweep_thresholds, Gateways, PipelineError,
    RecordOutcome, RewriteMode, RunManifest,
};
use roi_core::{EvalReport, Gateway, RunConfig};
use serde::{Deserialize, Serialize};

pub use config::{load_config, ConfigError};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Backend(m) => m,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway(g) => g.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Editrate,
    Bleu,
    Rougel,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Editrate => MetricKind::EditRate,
            MetricArg::Bleu => MetricKind::Bleu,
            MetricArg::Rougel => MetricKind::RougeL,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    None,
    Rewriter,
    #[value(name = "self")]
    SelfRewrite,
}

impl From<ModeArg> for RewriteMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::None => RewriteMode::None,
            ModeArg::Rewriter => RewriteMode::TrainedRewriter,
            ModeArg::SelfRewrite => RewriteMode::SelfRewrite,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "roi",
    version,
    about = "Rewrite inputs before they reach an LLM, and measure the effect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand. Values given here override the config
/// file.
#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long = "in", global = true, value_name = "PATH")]
    input: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    metric: Option<MetricArg>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    max_attempts: Option<u32>,
    #[arg(long, global = true)]
    mode: Option<ModeArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on a seeded uniform sample of this many records.
    #[arg(long, global = true)]
    sample_n: Option<usize>,
    #[arg(long, global = true)]
    max_inflight: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    /// Validate config and inputs, then stop without calling any backend or
    /// writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Back-translate corpus targets into gated rewrite records.
    BuildRewrites,
    /// Gate precomputed (original, rewritten) pairs.
    Filter,
    /// Write rewrite records as seq2seq training pairs.
    ExportFinetune {
        /// Keep pairs where the original was restored.
        #[arg(long)]
        include_identity: bool,
        /// Emit (rewrite, original) instead of (original, rewrite).
        #[arg(long)]
        reverse: bool,
    },
    /// Rewrite, gate and run the task model over a corpus, then evaluate.
    Run,
    /// Evaluate saved outcomes, or compare two reports.
    Evaluate {
        /// Corpus the outcomes were produced from.
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        /// Origin and rewrite report JSON files.
        #[arg(long, num_args = 2, value_names = ["ORIGIN", "REWRITE"])]
        compare: Option<Vec<PathBuf>>,
    },
    /// Run every (metric, gamma) cell plus the origin baseline.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "editrate,bleu,rougel")]
        metrics: Vec<MetricArg>,
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.8")]
        gammas: Vec<f64>,
    },
    /// Write a seeded uniform sample of a corpus.
    Subsample,
    /// Inspect or populate the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Subcommand)]
enum CacheAction {
    /// Print the entry count, or one entry with --key.
    Inspect {
        #[arg(long)]
        key: Option<String>,
    },
    /// Send every request a `run` over --in would make, storing responses.
    Warm,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("roi: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let c = &cli.common;
    let cfg = resolve_config(c)?;
    match cli.command {
        Command::BuildRewrites => build_rewrites(c, &cfg),
        Command::Filter => filter(c, &cfg),
        Command::ExportFinetune {
            include_identity,
            reverse,
        } => export(c, include_identity, reverse),
        Command::Run => run_cmd(c, &cfg),
        Command::Evaluate { corpus, compare } => match compare {
            Some(paths) => compare_cmd(c, &paths[0], &paths[1]),
            None => evaluate_cmd(c, &cfg, corpus.as_deref()),
        },
        Command::Sweep { metrics, gammas } => sweep(c, &cfg, &metrics, &gammas),
        Command::Subsample => subsample_cmd(c, &cfg),
        Command::Cache { action } => match action {
            CacheAction::Inspect { key } => cache_inspect(&cfg, key.as_deref()),
            CacheAction::Warm => cache_warm(c, &cfg),
        },
    }
}

fn resolve_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = c.metric {
        cfg.filter.metric = m.into();
    }
    if let Some(g) = c.gamma {
        config::check_gamma("--gamma", g)?;
        cfg.filter.gamma = g;
    }
    if let Some(n) = c.max_attempts {
        if n == 0 {
            return Err(CliError::Usage("--max-attempts must be at least 1".into()));
        }
        cfg.filter.max_attempts = n;
    }
    if let Some(m) = c.mode {
        cfg.rewrite_mode = m.into();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.max_inflight {
        if n == 0 {
            return Err(CliError::Usage("--max-inflight must be at least 1".into()));
        }
        cfg.max_inflight = n;
    }
    if let Some(d) = &c.cache_dir {
        cfg.cache_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    v.as_deref()
        .ok_or_else(|| CliError::Usage(format!("{flag} is required for this command")))
}

fn ensure_exists(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{}: no such file or directory",
            path.display()
        )))
    }
}

fn load_inputs(c: &Common, cfg: &RunConfig) -> CliResult<(PathBuf, Vec<ParallelRecord>)> {
    let path = required(&c.input, "--in")?;
    ensure_exists(path)?;
    let corpus = load_corpus(path)?;
    let corpus = match c.sample_n {
        Some(n) => subsample(&corpus, n, cfg.seed)?,
        None => corpus,
    };
    Ok((path.to_owned(), corpus))
}

fn dry_run_done(what: &str) -> CliResult {
    eprintln!("dry run: {what}; nothing written");
    Ok(())
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn stats_line(prefix: &str, s: &FilterStats) {
    eprintln!(
        "{prefix}: total={} kept={} reverted={} errors={}",
        s.total, s.kept, s.reverted, s.errors
    );
}

fn gateway_line(role: &str, s: GatewayStats) {
    eprintln!(
        "{role} gateway: backend_calls={} cache_hits={} network_requests={}",
        s.backend_calls, s.cache_hits, s.network_requests
    );
}

fn build_rewrites(c: &Common, cfg: &RunConfig) -> CliResult {
    let (input, corpus) = load_inputs(c, cfg)?;
    let out = required(&c.out, "--out")?;
    if let Some(r) = corpus.iter().find(|r| r.target.trim().is_empty()) {
        return Err(DatasetError::EmptyTarget { id: r.id.clone() }.into());
    }
    if c.dry_run {
        return dry_run_done(&format!("{} records", corpus.len()));
    }
    let gateway = Gateway::from_spec(
        &cfg.rewriter.backend,
        cfg.cache_dir.as_deref(),
        cfg.max_inflight,
    )?;
    let records = build_backtranslation_pairs(
        &corpus,
        &gateway,
        &cfg.back_translate_template(),
        &cfg.rewriter_params(),
        &cfg.filter,
        &cfg.policy,
    )?;
    write_rewrites(out, &records)?;
    let manifest = CorpusManifest::new(&[&input], &corpus, cfg.policy, &cfg.rewriter.backend, cfg);
    manifest.write(&out.with_extension("manifest.json"))?;
    let stats = roi_core::dataset::rewrite_stats(&records, cfg.filter.metric);
    stats_line("build-rewrites", &stats);
    gateway_line("rewriter", gateway.stats());
    if !records.is_empty() && stats.errors == records.len() {
        return Err(CliError::Backend(
            "every record failed at the backend".into(),
        ));
    }
    Ok(())
}

/// One line of `filter` input. `id` defaults to the line number.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    #[serde(default)]
    id: Option<String>,
    original: String,
    rewritten: String,
}

fn filter(c: &Common, cfg: &RunConfig) -> CliResult {
    let input = required(&c.input, "--in")?;
    ensure_exists(input)?;
    let rows: Vec<(usize, PairLine)> = read_jsonl(input)?;
    let out = if c.dry_run {
        None
    } else {
        Some(required(&c.out, "--out")?)
    };
    let Some(out) = out else {
        return dry_run_done(&format!("{} pairs", rows.len()));
    };
    let pairs: Vec<(&str, &str)> = rows
        .iter()
        .map(|(_, p)| (p.original.as_str(), p.rewritten.as_str()))
        .collect();
    let (decisions, stats) = filter_dataset(&pairs, &cfg.filter, &cfg.policy);
    let records: Vec<RewriteRecord> = rows
        .iter()
        .zip(decisions)
        .map(|((line, p), d)| {
            let id = p.id.clone().unwrap_or_else(|| line.to_string());
            RewriteRecord::from_decision(&id, &p.original, d, &cfg.policy)
        })
        .collect();
    write_rewrites(out, &records)?;
    stats_line("filter", &stats);
    Ok(())
}

fn export(c: &Common, include_identity: bool, reverse: bool) -> CliResult {
    let input = required(&c.input, "--in")?;
    ensure_exists(input)?;
    let records = load_rewrites(input)?;
    if c.dry_run {
        return dry_run_done(&format!("{} rewrite records", records.len()));
    }
    let out = required(&c.out, "--out")?;
    let direction = if reverse {
        PairDirection::RewriteToOriginal
    } else {
        PairDirection::OriginalToRewrite
    };
    let counts = export_finetune(&records, out, include_identity, direction)?;
    eprintln!(
        "export-finetune: written={} dropped={}",
        counts.written, counts.dropped
    );
    Ok(())
}

#[derive(Serialize)]
struct RunStats {
    rewriter: GatewayStats,
    task: GatewayStats,
}

fn run_cmd(c: &Common, cfg: &RunConfig) -> CliResult {
    let (_, corpus) = load_inputs(c, cfg)?;
    let dir = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    if c.dry_run {
        return dry_run_done(&format!("{} records", corpus.len()));
    }
    let gateways = Gateways::from_config(cfg)?;
    let outcomes = run_inference(&corpus, cfg, &gateways)?;
    let report = evaluate(&outcomes, &corpus, cfg)?;

    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("report.json"), report.to_json()?)?;
    write_file(&dir.join("report.txt"), report.to_text())?;
    write_jsonl(&dir.join("outcomes.jsonl"), &outcomes)?;
    let manifest = RunManifest::new(cfg, &corpus);
    write_file(&dir.join("manifest.json"), to_pretty(&manifest))?;
    let stats = RunStats {
        rewriter: gateways.rewriter.stats(),
        task: gateways.task.stats(),
    };
    write_file(&dir.join("gateway_stats.json"), to_pretty(&stats))?;

    if let Some(s) = &report.filter_stats {
        stats_line("rewrite gate", s);
    }
    gateway_line("rewriter", stats.rewriter);
    gateway_line("task", stats.task);
    eprintln!(
        "run: {} evaluated, {} failed, report in {}",
        report.counts.evaluated,
        report.counts.failed,
        dir.display()
    );
    all_failed(&outcomes)
}

fn all_failed(outcomes: &[RecordOutcome]) -> CliResult {
    if !outcomes.is_empty() && outcomes.iter().all(RecordOutcome::failed) {
        let first = outcomes[0].error.clone().unwrap_or_default();
        Err(CliError::Backend(format!(
            "every record failed; first error: {first}"
        )))
    } else {
        Ok(())
    }
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn evaluate_cmd(c: &Common, cfg: &RunConfig, corpus_path: Option<&Path>) -> CliResult {
    let input = required(&c.input, "--in")?;
    let corpus_path =
        corpus_path.ok_or_else(|| CliError::Usage("--corpus is required with --in".into()))?;
    ensure_exists(input)?;
    ensure_exists(corpus_path)?;
    let corpus = load_corpus(corpus_path)?;
    let outcomes: Vec<RecordOutcome> = read_jsonl(input)?.into_iter().map(|(_, o)| o).collect();
    let report = evaluate(&outcomes, &corpus, cfg)?;
    if c.dry_run {
        return dry_run_done(&format!("{} outcomes", outcomes.len()));
    }
    if let Some(out) = &c.out {
        write_file(out, report.to_json()?)?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn read_report(path: &Path) -> CliResult<EvalReport> {
    ensure_exists(path)?;
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let report = EvalReport::from_json(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    report
        .verify()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(report)
}

fn compare_cmd(c: &Common, a: &Path, b: &Path) -> CliResult {
    let (a, b) = (read_report(a)?, read_report(b)?);
    let delta = compare_origin_rewrite(&a, &b)?;
    if c.dry_run {
        return dry_run_done("reports are comparable");
    }
    if let Some(out) = &c.out {
        write_file(out, delta.to_csv())?;
    }
    print!("{}", delta.to_text());
    Ok(())
}

fn sweep(c: &Common, cfg: &RunConfig, metrics: &[MetricArg], gammas: &[f64]) -> CliResult {
    for &g in gammas {
        config::check_gamma("--gammas", g)?;
    }
    let (_, corpus) = load_inputs(c, cfg)?;
    if c.dry_run {
        return dry_run_done(&format!(
            "{} cells over {} records",
            metrics.len() * gammas.len(),
            corpus.len()
        ));
    }
    let gateways = Gateways::from_config(cfg)?;
    let metrics: Vec<MetricKind> = metrics.iter().map(|&m| m.into()).collect();
    let table = sweep_thresholds(&corpus, cfg, &gateways, &metrics, gammas);
    let csv = table.to_csv();
    match &c.out {
        Some(out) => write_file(out, &csv)?,
        None => print!("{csv}"),
    }
    for row in table.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "sweep: cell {:?} gamma {:?} failed: {}",
            row.metric,
            row.gamma,
            row.error.as_deref().unwrap_or_default()
        );
    }
    gateway_line("rewriter", gateways.rewriter.stats());
    gateway_line("task", gateways.task.stats());
    if table.rows.iter().all(|r| r.error.is_some()) {
        return Err(CliError::Backend("every sweep cell failed".into()));
    }
    Ok(())
}

fn subsample_cmd(c: &Common, cfg: &RunConfig) -> CliResult {
    let n = c
        .sample_n
        .ok_or_else(|| CliError::Usage("--sample-n is required for subsample".into()))?;
    let (_, sample) = load_inputs(c, cfg)?;
    if c.dry_run {
        return dry_run_done(&format!("{n} records"));
    }
    let out = required(&c.out, "--out")?;
    write_corpus(out, &sample)?;
    eprintln!(
        "subsample: wrote {} records (seed {})",
        sample.len(),
        cfg.seed
    );
    Ok(())
}

fn cache_of(cfg: &RunConfig) -> CliResult<ResponseCache> {
    cfg.cache_dir
        .as_ref()
        .map(ResponseCache::new)
        .ok_or_else(|| {
            CliError::Usage(
                "a cache directory is needed (--cache-dir or cache_dir in config)".into(),
            )
        })
}

fn cache_inspect(cfg: &RunConfig, key: Option<&str>) -> CliResult {
    let cache = cache_of(cfg)?;
    match key {
        Some(k) => {
            let entry = cache
                .get(k)?
                .ok_or_else(|| CliError::Data(format!("no cache entry for key {k}")))?;
            println!("{}", to_pretty(&entry).trim_end());
        }
        None => {
            let keys = cache
                .keys()
                .map_err(|e| CliError::Data(format!("{}: {e}", cache.dir().display())))?;
            println!("{} entries in {}", keys.len(), cache.dir().display());
        }
    }
    Ok(())
}

fn cache_warm(c: &Common, cfg: &RunConfig) -> CliResult {
    cache_of(cfg)?;
    let (_, corpus) = load_inputs(c, cfg)?;
    if c.dry_run {
        return dry_run_done(&format!("{} records", corpus.len()));
    }
    let gateways = Gateways::from_config(cfg)?;
    let outcomes = run_inference(&corpus, cfg, &gateways)?;
    let failed = outcomes.iter().filter(|o| o.failed()).count();
    gateway_line("rewriter", gateways.rewriter.stats());
    gateway_line("task", gateways.task.stats());
    eprintln!("cache warm: {} records, {failed} failed", outcomes.len());
    if failed > 0 {
        return Err(CliError::Backend(format!(
            "{failed} records could not be warmed"
        )));
    }
    Ok(())
}
