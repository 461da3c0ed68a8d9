//! Run configuration: a TOML file with `${VAR}` interpolation, overridable
//! from the command line.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use regex::Regex;
use serde::Deserialize;
use szzkit::agent::{PriceTable, SessionBudget};
use szzkit::pipelines::{PipelineConfig, PipelineKind};

pub const DEFAULT_KEY_ENV: &str = "BACKEND_API_KEY";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub dataset: Option<PathBuf>,
    pub repo_root: Option<PathBuf>,
    pub pipeline: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub pipeline_config: PipelineConfig,
    #[serde(default)]
    pub prices: PriceTable,
    #[serde(default)]
    pub budget: SessionBudget,
    pub retry_attempts: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Scripted {
        script: PathBuf,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        /// Requests in flight across all workers; defaults to `parallelism`.
        max_in_flight: Option<usize>,
    },
}

fn default_key_env() -> String {
    DEFAULT_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    300
}

impl BackendConfig {
    pub fn key_env(&self) -> Option<&str> {
        match self {
            BackendConfig::Http { api_key_env, .. } => Some(api_key_env),
            BackendConfig::Scripted { .. } => None,
        }
    }

    pub fn timeout(&self) -> Duration {
        match self {
            BackendConfig::Http { timeout_secs, .. } => Duration::from_secs(*timeout_secs),
            BackendConfig::Scripted { .. } => Duration::ZERO,
        }
    }
}

/// Fully resolved settings for `run`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub repo_root: PathBuf,
    pub pipeline: PipelineKind,
    pub backend: Option<BackendConfig>,
    pub pipeline_config: PipelineConfig,
    pub parallelism: usize,
    pub output_dir: PathBuf,
    pub prices: PriceTable,
    pub budget: SessionBudget,
    pub retry_attempts: Option<u32>,
}

/// Replaces `${NAME}` with the environment variable's value. `$${` escapes.
pub fn interpolate(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let re = Regex::new(r"\$\$\{|\$\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in re.captures_iter(text) {
        let m = caps.get(0).unwrap();
        out.push_str(&text[last..m.start()]);
        match caps.get(1) {
            None => out.push_str("${"),
            Some(name) => {
                let v = lookup(name.as_str())
                    .ok_or_else(|| anyhow!("environment variable {} is not set", name.as_str()))?;
                out.push_str(&v);
            }
        }
        last = m.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

fn interpolate_value(v: &mut toml::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    match v {
        toml::Value::String(s) => *s = interpolate(s, lookup)?,
        toml::Value::Array(items) => {
            for x in items {
                interpolate_value(x, lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, x) in t.iter_mut() {
                interpolate_value(x, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Parses TOML, interpolating string values only (so a value containing quotes
/// cannot break the syntax).
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let mut v: toml::Value = toml::from_str(text).with_context(|| format!("parsing {what}"))?;
    interpolate_value(&mut v, &|k| std::env::var(k).ok())?;
    T::deserialize(v).with_context(|| format!("reading {what}"))
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut f: RunFile = parse_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        rebase(&mut f.dataset);
        rebase(&mut f.repo_root);
        rebase(&mut f.output_dir);
        if let Some(BackendConfig::Scripted { script }) = &mut f.backend {
            if script.is_relative() {
                *script = base.join(&*script);
            }
        }
        Ok(f)
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let pipeline = self.pipeline.ok_or_else(|| anyhow!("no pipeline given"))?;
        let pipeline: PipelineKind = pipeline.parse().map_err(|e: String| anyhow!(e))?;
        let parallelism = self.parallelism.unwrap_or(1);
        if parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if pipeline.is_agentic() && self.backend.is_none() {
            bail!("pipeline {pipeline} needs a backend (--script or a [backend] table)");
        }
        Ok(RunConfig {
            dataset: self.dataset.ok_or_else(|| anyhow!("no dataset given"))?,
            repo_root: self.repo_root.ok_or_else(|| anyhow!("no repo_root given"))?,
            output_dir: self.output_dir.ok_or_else(|| anyhow!("no output_dir given"))?,
            pipeline,
            backend: self.backend,
            pipeline_config: self.pipeline_config,
            parallelism,
            prices: self.prices,
            budget: self.budget,
            retry_attempts: self.retry_attempts,
        })
    }
}
