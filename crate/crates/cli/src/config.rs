//! TOML run configuration.
//!
//! Every key is optional; missing keys take the library defaults. Unknown
//! keys and out-of-range values are rejected with the key named.
//!
//! ```toml
//! task = "translate"
//! mode = "rewriter"
//! metric = "editrate"
//! gamma = 0.5
//!
//! [rewriter]
//! model = "rewriter-small"
//!
//! [rewriter.backend]
//! kind = "http_chat"
//! endpoint_url = "http://localhost:8000/v1"
//! ```

use std::path::{Path, PathBuf};

use roi_core::gateway::TemplateTask;
use roi_core::metrics::MetricKind;
use roi_core::pipeline::{RewriteMode, RoleConfig, Task};
use roi_core::{BackendSpec, NormalizationPolicy, PromptTemplate, RunConfig};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub task: Option<Task>,
    pub mode: Option<RewriteMode>,
    pub gate: Option<bool>,
    pub metric: Option<MetricKind>,
    pub gamma: Option<f64>,
    pub max_attempts: Option<u32>,
    pub seed: Option<u64>,
    pub temperature: Option<f64>,
    pub num_beams: Option<u32>,
    pub max_new_tokens: Option<u32>,
    pub max_inflight: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub labels: Option<Vec<String>>,
    pub policy: Option<NormalizationPolicy>,
    pub rewriter: Option<RoleFile>,
    pub task_llm: Option<RoleFile>,
    pub templates: Option<TemplatesFile>,
}

/// Per-role settings. Decoding keys here win over the top-level ones.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleFile {
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub num_beams: Option<u32>,
    pub max_new_tokens: Option<u32>,
    pub backend: Option<BackendSpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatesFile {
    pub task: Option<String>,
    pub rewrite: Option<String>,
    pub back_translate: Option<String>,
}

pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    file.into_run_config()
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_config(&text, path)
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_owned(),
        message: message.into(),
    }
}

pub fn check_gamma(key: &str, gamma: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(invalid(key, format!("{gamma} is outside [0, 1]")))
    }
}

fn check_positive(key: &str, v: u64) -> Result<(), ConfigError> {
    if v == 0 {
        Err(invalid(key, "must be at least 1"))
    } else {
        Ok(())
    }
}

fn check_temperature(key: &str, t: f64) -> Result<(), ConfigError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("{t} is not a non-negative number")))
    }
}

impl ConfigFile {
    pub fn into_run_config(self) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(t) = self.task {
            cfg.task = t;
        }
        if let Some(m) = self.mode {
            cfg.rewrite_mode = m;
        }
        if let Some(g) = self.gate {
            cfg.gate = g;
        }
        if let Some(m) = self.metric {
            cfg.filter.metric = m;
        }
        if let Some(g) = self.gamma {
            check_gamma("gamma", g)?;
            cfg.filter.gamma = g;
        }
        if let Some(n) = self.max_attempts {
            check_positive("max_attempts", n.into())?;
            cfg.filter.max_attempts = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.max_inflight {
            check_positive("max_inflight", n as u64)?;
            cfg.max_inflight = n;
        }
        cfg.cache_dir = self.cache_dir;
        if let Some(d) = self.output_dir {
            cfg.output_dir = d;
        }
        if let Some(labels) = self.labels {
            if labels.is_empty() || labels.iter().any(|l| l.trim().is_empty()) {
                return Err(invalid("labels", "needs at least one non-empty label"));
            }
            cfg.labels = labels;
        }
        if let Some(p) = self.policy {
            cfg.policy = p;
        }

        for role in [&mut cfg.rewriter, &mut cfg.task_llm] {
            let p = &mut role.params;
            if let Some(t) = self.temperature {
                check_temperature("temperature", t)?;
                p.temperature = t;
            }
            if let Some(b) = self.num_beams {
                check_positive("num_beams", b.into())?;
                p.num_beams = b;
            }
            if let Some(n) = self.max_new_tokens {
                check_positive("max_new_tokens", n.into())?;
                p.max_new_tokens = n;
            }
        }
        apply_role("rewriter", self.rewriter, &mut cfg.rewriter)?;
        apply_role("task_llm", self.task_llm, &mut cfg.task_llm)?;

        if let Some(t) = self.templates {
            let task_kind = match cfg.task {
                Task::Translate => TemplateTask::Translate,
                Task::Summarize => TemplateTask::Summarize,
                Task::Classify => TemplateTask::Classify,
            };
            let mk =
                |key: &str, name: &str, text: Option<String>, kind| -> Result<_, ConfigError> {
                    text.map(|s| {
                        let tpl = PromptTemplate::new(name, s, kind);
                        tpl.validate()
                            .map(|_| tpl)
                            .map_err(|e| invalid(key, e.to_string()))
                    })
                    .transpose()
                };
            cfg.templates.task = mk("templates.task", "custom_task", t.task, task_kind)?;
            cfg.templates.rewrite = mk(
                "templates.rewrite",
                "custom_rewrite",
                t.rewrite,
                TemplateTask::RewriteSelf,
            )?;
            cfg.templates.back_translate = mk(
                "templates.back_translate",
                "custom_back_translate",
                t.back_translate,
                TemplateTask::RewriteBackTranslate,
            )?;
        }
        Ok(cfg)
    }
}

fn apply_role(
    name: &str,
    file: Option<RoleFile>,
    role: &mut RoleConfig,
) -> Result<(), ConfigError> {
    let Some(file) = file else { return Ok(()) };
    if let Some(m) = file.model {
        role.params.model_name = m;
    }
    if let Some(t) = file.temperature {
        check_temperature(&format!("{name}.temperature"), t)?;
        role.params.temperature = t;
    }
    if let Some(b) = file.num_beams {
        check_positive(&format!("{name}.num_beams"), b.into())?;
        role.params.num_beams = b;
    }
    if let Some(n) = file.max_new_tokens {
        check_positive(&format!("{name}.max_new_tokens"), n.into())?;
        role.params.max_new_tokens = n;
    }
    if let Some(b) = file.backend {
        if let BackendSpec::HttpChat {
            endpoint_url,
            timeout_secs,
            ..
        } = &b
        {
            if !(endpoint_url.starts_with("http://") || endpoint_url.starts_with("https://")) {
                return Err(invalid(
                    &format!("{name}.backend.endpoint_url"),
                    format!("`{endpoint_url}` is not an http(s) URL"),
                ));
            }
            check_positive(&format!("{name}.backend.timeout_secs"), *timeout_secs)?;
        }
        role.backend = b;
    }
    Ok(())
}
