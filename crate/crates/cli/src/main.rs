mod config;
mod score;
mod trace_report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, NaiveDate};
use clap::{Parser, Subcommand};
use szzkit::agent::{HttpBackend, ScriptFile, SessionOptions};
use szzkit::batch::{run_batch, BackendSource, BatchOptions, SharedBackend, Throttled};
use szzkit::eval::{collect_fixes_dataset, load_dataset, save_dataset};
use szzkit::gitio::Repo;
use szzkit::pipelines::{run_baseline, PipelineConfig, PipelineKind, PredictionRecord, Threshold};

use crate::config::{BackendConfig, RunConfig, RunFile};

/// Exit status of a command that ran to the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok,
    Partial,
}

#[derive(Parser)]
#[command(name = "szzkit", version, about = "Bug-introducing commit identification toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a pipeline over a dataset (resumable).
    Run(RunArgs),
    /// Score predictions against a dataset.
    Score {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Second predictions file for a paired comparison.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Where to write the JSON report [default: report.json next to the predictions].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyse session traces.
    TraceReport {
        #[arg(long)]
        traces: PathBuf,
        /// Fix materials [default: `materials` next to the traces dir, if present].
        #[arg(long)]
        materials: Option<PathBuf>,
        /// TOML price table (`[models.<name>] input/output/cache` per million tokens).
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long, default_value = "trace-report")]
        out: PathBuf,
    },
    /// Build a dataset from `Fixes:` tags.
    Collect {
        #[arg(long)]
        repo: PathBuf,
        /// Dataset repo_id [default: the repository directory name].
        #[arg(long)]
        repo_id: Option<String>,
        /// Unix seconds, YYYY-MM-DD or RFC 3339; inclusive.
        #[arg(long)]
        since: String,
        /// Exclusive.
        #[arg(long)]
        until: String,
        #[arg(long, default_value = "HEAD")]
        tip: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one SZZ-family baseline on a single fix.
    Szz {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        fix: String,
        /// szz, lszz, rszz or vszz.
        #[arg(long, default_value = "szz")]
        variant: String,
        #[arg(long)]
        max_depth: Option<u32>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    repo_root: Option<PathBuf>,
    #[arg(long)]
    pipeline: Option<String>,
    /// Scripted-backend JSON script (replaces any configured backend).
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Selection threshold (positive integer or INFINITY).
    #[arg(long)]
    threshold: Option<Threshold>,
    /// Rerun entries that already have predictions.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let out = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Score { dataset, predictions, compare, out } => {
            score::cmd_score(&dataset, &predictions, compare.as_deref(), out.as_deref())
        }
        Cmd::TraceReport { traces, materials, prices, out } => {
            trace_report::cmd_trace_report(&traces, materials.as_deref(), prices.as_deref(), &out)
        }
        Cmd::Collect { repo, repo_id, since, until, tip, out } => {
            cmd_collect(&repo, repo_id, &since, &until, &tip, &out)
        }
        Cmd::Szz { repo, fix, variant, max_depth } => cmd_szz(&repo, &fix, &variant, max_depth),
    };
    match out {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run_config(args: RunArgs) -> Result<RunConfig> {
    let mut f = match &args.config {
        Some(p) => RunFile::load(p)?,
        None => RunFile::default(),
    };
    f.dataset = args.dataset.or(f.dataset);
    f.repo_root = args.repo_root.or(f.repo_root);
    f.pipeline = args.pipeline.or(f.pipeline);
    f.output_dir = args.output_dir.or(f.output_dir);
    f.parallelism = args.parallelism.or(f.parallelism);
    if let Some(script) = args.script {
        f.backend = Some(BackendConfig::Scripted { script });
    }
    if let Some(t) = args.threshold {
        f.pipeline_config.selection_threshold = t;
    }
    f.resolve()
}

fn backend_source(cfg: &RunConfig) -> Result<Option<Box<dyn BackendSource>>> {
    if !cfg.pipeline.is_agentic() {
        return Ok(None);
    }
    Ok(match &cfg.backend {
        None => None,
        Some(BackendConfig::Scripted { script }) => {
            let text = fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
            let s: ScriptFile =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", script.display()))?;
            Some(Box::new(s))
        }
        Some(b @ BackendConfig::Http { endpoint, model, api_key_env, max_in_flight, .. }) => {
            let http = HttpBackend::new(endpoint, model, Some(api_key_env), b.timeout())
                .map_err(|e| anyhow!("backend: {e}"))?;
            let limit = max_in_flight.unwrap_or(cfg.parallelism).max(1);
            Some(Box::new(SharedBackend(Arc::new(Throttled::new(http, limit)))))
        }
    })
}

fn cmd_run(args: RunArgs) -> Result<Status> {
    let force = args.force;
    let cfg = run_config(args)?;
    let entries = load_dataset(&cfg.dataset)?;
    let source = backend_source(&cfg)?;
    let scripted = matches!(cfg.backend, Some(BackendConfig::Scripted { .. }));
    let defaults = SessionOptions::default();
    let session = SessionOptions {
        budget: cfg.budget,
        retry_attempts: cfg.retry_attempts.unwrap_or(defaults.retry_attempts),
        // scripted runs must be reproducible byte for byte
        retry_base: if scripted { Duration::ZERO } else { defaults.retry_base },
        record_timing: !scripted,
        prices: cfg.prices.clone(),
    };
    let opts = BatchOptions {
        pipeline: cfg.pipeline,
        config: cfg.pipeline_config.clone(),
        repo_root: cfg.repo_root.clone(),
        out_dir: cfg.output_dir.clone(),
        parallelism: cfg.parallelism,
        force,
        session,
    };
    let summary = run_batch(&entries, &opts, source.as_deref())?;
    if let Some(env) = cfg.backend.as_ref().and_then(BackendConfig::key_env) {
        check_no_secret(&cfg.output_dir, env)?;
    }
    println!(
        "{} entries: {} completed, {} skipped, {} failed, {} sessions",
        summary.total, summary.completed, summary.skipped, summary.failed, summary.sessions
    );
    Ok(if summary.failed > 0 { Status::Partial } else { Status::Ok })
}

/// Fails if the value of `env` shows up in any file under `dir`.
fn check_no_secret(dir: &Path, env: &str) -> Result<()> {
    let Some(secret) = std::env::var(env).ok().filter(|s| s.len() >= 4) else {
        return Ok(());
    };
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if fs::read(&p)?.windows(secret.len()).any(|w| w == secret.as_bytes()) {
                bail!("{} contains the value of {env}", p.display());
            }
        }
    }
    Ok(())
}

fn parse_time(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(n) = s.parse::<i64>() {
        return Ok(n);
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp())
        .map_err(|_| anyhow!("cannot parse time {s:?} (unix seconds, YYYY-MM-DD or RFC 3339)"))
}

fn cmd_collect(
    repo: &Path,
    repo_id: Option<String>,
    since: &str,
    until: &str,
    tip: &str,
    out: &Path,
) -> Result<Status> {
    let (since, until) = (parse_time(since)?, parse_time(until)?);
    if until < since {
        bail!("--until is before --since");
    }
    let r = Repo::open(repo)?;
    let tip = r.resolve_commit(tip)?;
    let repo_id = match repo_id {
        Some(id) => id,
        None => fs::canonicalize(repo)?
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| anyhow!("cannot derive a repo_id from {}; pass --repo-id", repo.display()))?,
    };
    let report = collect_fixes_dataset(&r, &tip, since, until, &repo_id)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_dataset(&report.entries, out)?;
    println!(
        "{} commits scanned, {} fixes found, {} tags resolved, {} tags skipped",
        report.commits_scanned,
        report.entries.len(),
        report.tags_resolved,
        report.skipped.len()
    );
    Ok(Status::Ok)
}

fn cmd_szz(repo: &Path, fix: &str, variant: &str, max_depth: Option<u32>) -> Result<Status> {
    let kind: PipelineKind = variant.parse().map_err(|e: String| anyhow!(e))?;
    if kind.is_agentic() {
        bail!("{kind} is not a baseline; use `run`");
    }
    let r = Repo::open(repo)?;
    let fix = r.resolve_commit(fix)?;
    let mut cfg = PipelineConfig::default();
    if let Some(d) = max_depth {
        cfg.vszz_max_depth = d;
    }
    let p = run_baseline(&r, &fix, kind, &cfg)?;
    let repo_id = repo.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let rec = PredictionRecord::new(&repo_id, &p, &szzkit::batch::config_hash(kind, &cfg, None));
    println!("{}", serde_json::to_string(&rec)?);
    Ok(Status::Ok)
}
