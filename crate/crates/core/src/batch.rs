//! Batch runs over a dataset: one prediction per entry, one trace file per
//! session, resumable by (entry, pipeline, config hash).

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use sha2::{Digest, Sha256};

use crate::agent::{Backend, BackendError, ChatReply, Message, ScriptFile, SessionOptions, SessionTrace, ToolSpec};
use crate::candidates::RedactionSpec;
use crate::eval::DatasetEntry;
use crate::gitio::{CommitId, Repo};
use crate::pipelines::{
    run_baseline, simple_szz_agent, szz_agent, AgentRunner, PipelineConfig, PipelineError,
    PipelineKind, Prediction, PredictionRecord,
};
use crate::trace::FixMaterials;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const TRACES_DIR: &str = "traces";
pub const MATERIALS_DIR: &str = "materials";

/// Hands out the backend used for one fix.
pub trait BackendSource: Send + Sync {
    fn backend_for(&self, fix: &CommitId) -> Arc<dyn Backend>;
    fn model(&self) -> String;
}

impl BackendSource for ScriptFile {
    fn backend_for(&self, fix: &CommitId) -> Arc<dyn Backend> {
        Arc::new(ScriptFile::backend_for(self, fix.as_str()))
    }

    fn model(&self) -> String {
        self.model.clone()
    }
}

/// One backend shared by every fix.
pub struct SharedBackend(pub Arc<dyn Backend>);

impl BackendSource for SharedBackend {
    fn backend_for(&self, _fix: &CommitId) -> Arc<dyn Backend> {
        self.0.clone()
    }

    fn model(&self) -> String {
        self.0.model().to_string()
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) {
        let mut n = self.free.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

/// Caps how many backend calls are in flight at once.
pub struct Throttled<B> {
    inner: B,
    sem: Semaphore,
}

impl<B> Throttled<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Throttled {
            inner,
            sem: Semaphore {
                free: Mutex::new(max_in_flight.max(1)),
                cv: Condvar::new(),
            },
        }
    }
}

impl<B: Backend> Backend for Throttled<B> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, messages: &[Message], tools: &[ToolSpec]) -> Result<ChatReply, BackendError> {
        self.sem.acquire();
        let out = self.inner.complete(messages, tools);
        self.sem.release();
        out
    }
}

/// First 16 hex digits of SHA-256 over the pipeline, its config and the model.
pub fn config_hash(pipeline: PipelineKind, cfg: &PipelineConfig, model: Option<&str>) -> String {
    let canon = serde_json::json!({
        "pipeline": pipeline,
        "config": cfg,
        "model": model,
    });
    let digest = Sha256::digest(canon.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub pipeline: PipelineKind,
    pub config: PipelineConfig,
    /// Repository of an entry is `repo_root/<repo_id>`.
    pub repo_root: PathBuf,
    pub out_dir: PathBuf,
    pub parallelism: usize,
    pub force: bool,
    pub session: SessionOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchSummary {
    pub total: usize,
    pub skipped: usize,
    pub completed: usize,
    pub failed: usize,
    pub sessions: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("repository for {repo_id} not found at {path}")]
    MissingRepo { repo_id: String, path: String },
    #[error("pipeline {0} needs a backend")]
    NoBackend(PipelineKind),
    #[error("parallelism must be at least 1")]
    BadParallelism,
    #[error("{path}:{line}: {reason}")]
    BadPredictions { path: String, line: usize, reason: String },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |e| BatchError::Io(path.display().to_string(), e)
}

pub fn repo_path(root: &Path, repo_id: &str) -> PathBuf {
    root.join(repo_id)
}

/// Reads a predictions file. A later line for the same (repo, fix) wins.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, BatchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| BatchError::BadPredictions {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

struct FixOutcome {
    record: PredictionRecord,
    traces: Vec<SessionTrace>,
    materials: Option<FixMaterials>,
}

fn run_one(
    entry: &DatasetEntry,
    opts: &BatchOptions,
    backend: Option<Arc<dyn Backend>>,
    hash: &str,
) -> FixOutcome {
    let spec = RedactionSpec::new(entry.gt_bics.iter().cloned());
    let fail = |e: String, traces: Vec<SessionTrace>| {
        let mut p = Prediction::empty(entry.fix.clone(), opts.pipeline);
        p.session_ids = traces.iter().map(|t| t.session_id.clone()).collect();
        let mut record = PredictionRecord::new(&entry.repo_id, &p, hash);
        record.error = Some(e);
        FixOutcome {
            record,
            traces,
            materials: None,
        }
    };
    let repo = match Repo::open(repo_path(&opts.repo_root, &entry.repo_id)) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string(), Vec::new()),
    };
    if let Err(e) = repo.commit_meta(&entry.fix) {
        return fail(e.to_string(), Vec::new());
    }
    let Some(backend) = backend else {
        return match run_baseline(&repo, &entry.fix, opts.pipeline, &opts.config) {
            Ok(p) => FixOutcome {
                record: PredictionRecord::new(&entry.repo_id, &p, hash),
                traces: Vec::new(),
                materials: None,
            },
            Err(e) => fail(e.to_string(), Vec::new()),
        };
    };
    let materials = match FixMaterials::load_from_repo(&repo, &entry.fix, opts.config.context_width, &spec) {
        Ok(m) => m,
        Err(e) => return fail(e.to_string(), Vec::new()),
    };
    let work = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return fail(e.to_string(), Vec::new()),
    };
    let mut runner = AgentRunner::new(
        backend.as_ref(),
        opts.session.clone(),
        spec,
        opts.pipeline,
        entry.fix.clone(),
        work.path(),
    );
    let result: Result<Prediction, PipelineError> = match opts.pipeline {
        PipelineKind::SzzAgent => szz_agent(&repo, &mut runner, &opts.config),
        PipelineKind::SimpleAgent => simple_szz_agent(&repo, &mut runner, &opts.config),
        other => Err(PipelineError::NotABaseline(other)),
    };
    let traces = runner.into_sessions();
    match result {
        Ok(p) => FixOutcome {
            record: PredictionRecord::new(&entry.repo_id, &p, hash),
            traces,
            materials: Some(materials),
        },
        Err(e) => {
            let mut out = fail(e.to_string(), traces);
            out.materials = Some(materials);
            out
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BatchError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn record_line(r: &PredictionRecord) -> String {
    let mut s = serde_json::to_string(r).expect("serializable");
    s.push('\n');
    s
}

/// Runs `opts.pipeline` over `entries`. Missing repositories are reported
/// before any output is written. Finished predictions are appended as they
/// arrive; at the end the file is rewritten in dataset order.
pub fn run_batch(
    entries: &[DatasetEntry],
    opts: &BatchOptions,
    backends: Option<&dyn BackendSource>,
) -> Result<BatchSummary, BatchError> {
    if opts.parallelism == 0 {
        return Err(BatchError::BadParallelism);
    }
    if opts.pipeline.is_agentic() && backends.is_none() {
        return Err(BatchError::NoBackend(opts.pipeline));
    }
    for e in entries {
        let p = repo_path(&opts.repo_root, &e.repo_id);
        if !p.is_dir() {
            return Err(BatchError::MissingRepo {
                repo_id: e.repo_id.clone(),
                path: p.display().to_string(),
            });
        }
    }
    let model = backends.filter(|_| opts.pipeline.is_agentic()).map(|b| b.model());
    let hash = config_hash(opts.pipeline, &opts.config, model.as_deref());

    let out = &opts.out_dir;
    let traces_dir = out.join(TRACES_DIR);
    let materials_dir = out.join(MATERIALS_DIR);
    fs::create_dir_all(&traces_dir).map_err(io_err(&traces_dir))?;
    if opts.pipeline.is_agentic() {
        fs::create_dir_all(&materials_dir).map_err(io_err(&materials_dir))?;
    }
    let pred_path = out.join(PREDICTIONS_FILE);

    let mut kept: HashMap<(String, CommitId), PredictionRecord> = HashMap::new();
    if pred_path.exists() {
        let mut dropped = 0;
        for r in read_predictions(&pred_path)? {
            if r.pipeline == opts.pipeline && r.config_hash == hash {
                kept.insert((r.repo_id.clone(), r.fix.clone()), r);
            } else {
                dropped += 1;
            }
        }
        if dropped > 0 {
            log::warn!("{dropped} prediction(s) from another pipeline or config will be replaced");
        }
    }

    let mut summary = BatchSummary {
        total: entries.len(),
        ..Default::default()
    };
    let mut todo = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let done = kept
            .get(&(e.repo_id.clone(), e.fix.clone()))
            .is_some_and(|r| r.error.is_none());
        if done && !opts.force {
            summary.skipped += 1;
        } else {
            todo.push(i);
        }
    }

    let log_file = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&pred_path)
            .map_err(io_err(&pred_path))?,
    );
    let fresh: Mutex<BTreeMap<usize, PredictionRecord>> = Mutex::new(BTreeMap::new());
    let first_error: Mutex<Option<BatchError>> = Mutex::new(None);
    let sessions = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let workers = opts.parallelism.min(todo.len()).max(1);

    let persist = |o: &FixOutcome| -> Result<(), BatchError> {
        for t in &o.traces {
            let p = traces_dir.join(format!("{}.jsonl", t.session_id));
            t.write(&p).map_err(io_err(&p))?;
        }
        if let Some(m) = &o.materials {
            let p = FixMaterials::path_in(&materials_dir, &o.record.fix);
            fs::write(&p, m.to_json()).map_err(io_err(&p))?;
        }
        let mut f: std::sync::MutexGuard<'_, File> = log_file.lock().unwrap();
        f.write_all(record_line(&o.record).as_bytes()).map_err(io_err(&pred_path))?;
        f.flush().map_err(io_err(&pred_path))
    };

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = todo.get(k) else { break };
                if first_error.lock().unwrap().is_some() {
                    break;
                }
                let e = &entries[i];
                let backend = backends.filter(|_| opts.pipeline.is_agentic()).map(|b| b.backend_for(&e.fix));
                let o = run_one(e, opts, backend, &hash);
                match &o.record.error {
                    Some(err) => log::warn!("{} {}: {err}", e.repo_id, e.fix),
                    None => log::info!("{} {}: {} bic(s)", e.repo_id, e.fix, o.record.bics.len()),
                }
                sessions.fetch_add(o.traces.len(), Ordering::SeqCst);
                if let Err(err) = persist(&o) {
                    first_error.lock().unwrap().get_or_insert(err);
                    break;
                }
                fresh.lock().unwrap().insert(i, o.record);
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }

    let fresh = fresh.into_inner().unwrap();
    let mut text = String::new();
    for (i, e) in entries.iter().enumerate() {
        let r = fresh
            .get(&i)
            .or_else(|| kept.get(&(e.repo_id.clone(), e.fix.clone())));
        if let Some(r) = r {
            if r.error.is_some() {
                summary.failed += 1;
            } else if fresh.contains_key(&i) {
                summary.completed += 1;
            }
            text.push_str(&record_line(r));
        }
    }
    drop(log_file);
    write_atomic(&pred_path, text.as_bytes())?;
    summary.sessions = sessions.into_inner();
    Ok(summary)
}
