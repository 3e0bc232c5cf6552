//! Problem store and run lifecycle. Everything durable lives under the data
//! directory: `problems/<id>.json` and `runs/<id>/{manifest,problem,archive}.json`.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use mcd_core::config::ProblemConfig;
use mcd_core::manifest::{sha256_hex, write_atomic, RunManifest, RunState, ARCHIVE_FILE, MANIFEST_FILE, PROBLEM_FILE};
use mcd_core::optimizer::{OptimizerConfig, Progress};
use mcd_core::sampler::{SampleError, SamplingRequest};
use mcd_core::study::{AnyArchive, AnyProblem, RunFailure};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use tokio::sync::Semaphore;

use crate::error::ApiError;

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub data_dir: PathBuf,
    /// Runs allowed to optimize at the same time; others wait as `pending`.
    pub max_concurrent_runs: usize,
    /// Relative dataset paths in registered problems resolve against this.
    pub base_dir: PathBuf,
}

impl ServiceOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceOptions {
            data_dir: data_dir.into(),
            max_concurrent_runs: 1,
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub problem_id: String,
    pub state: RunState,
    pub optimizer: OptimizerConfig,
    pub created_at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    /// Latest generation report.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub progress: Option<Progress>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub archive_size: Option<usize>,
    /// Predictor evaluations attributed to this run, including any since it finished.
    pub evaluations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub problem_id: String,
    /// Defaults to the problem's own optimizer section.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

struct Run {
    record: RunRecord,
    problem: Option<Arc<AnyProblem>>,
    archive: Option<Arc<AnyArchive>>,
    /// Evaluations recorded before the current problem instance existed.
    base_evaluations: u64,
    elapsed_seconds: f64,
}

impl Run {
    fn snapshot(&self) -> RunRecord {
        let mut r = self.record.clone();
        r.evaluations = self.base_evaluations + self.problem.as_ref().map_or(0, |p| p.evaluations());
        r
    }
}

pub struct Registry {
    opts: ServiceOptions,
    problems: RwLock<HashMap<String, Arc<ProblemConfig>>>,
    runs: RwLock<HashMap<String, Run>>,
    permits: Arc<Semaphore>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}

fn not_found(id: &str) -> ApiError {
    ApiError::NotFound(format!("no run `{id}`"))
}

impl Registry {
    /// Opens the data directory, reloading problems and runs found there.
    pub fn open(opts: ServiceOptions) -> io::Result<Arc<Self>> {
        fs::create_dir_all(opts.data_dir.join("problems"))?;
        fs::create_dir_all(opts.data_dir.join("runs"))?;
        let registry = Arc::new(Registry {
            permits: Arc::new(Semaphore::new(opts.max_concurrent_runs.max(1))),
            opts,
            problems: RwLock::new(HashMap::new()),
            runs: RwLock::new(HashMap::new()),
        });
        registry.restore()?;
        Ok(registry)
    }

    fn problems_dir(&self) -> PathBuf {
        self.opts.data_dir.join("problems")
    }

    fn run_dir(&self, id: &str) -> PathBuf {
        self.opts.data_dir.join("runs").join(id)
    }

    fn restore(&self) -> io::Result<()> {
        for entry in fs::read_dir(self.problems_dir())? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                match ProblemConfig::load(&path) {
                    Ok(c) => {
                        self.problems.write().unwrap().insert(c.problem_id(), Arc::new(c));
                    }
                    Err(e) => log::warn!("skipping {}: {e}", path.display()),
                }
            }
        }
        for entry in fs::read_dir(self.opts.data_dir.join("runs"))? {
            let dir = entry?.path();
            let manifest_path = dir.join(MANIFEST_FILE);
            let Ok(manifest) = RunManifest::load(&manifest_path) else {
                log::warn!("skipping {}: no readable manifest", dir.display());
                continue;
            };
            let run = self.restore_run(&dir, manifest);
            log::info!("restored run {} ({:?})", run.record.run_id, run.record.state);
            self.runs.write().unwrap().insert(run.record.run_id.clone(), run);
        }
        Ok(())
    }

    fn restore_run(&self, dir: &Path, mut manifest: RunManifest) -> Run {
        let mut run = Run {
            record: RunRecord {
                run_id: manifest.run_id.clone(),
                problem_id: manifest.problem_id.clone(),
                state: manifest.state,
                optimizer: manifest.optimizer.clone(),
                created_at: manifest.created_at.clone(),
                finished_at: manifest.finished_at.clone(),
                progress: None,
                archive_size: Some(manifest.archive_size),
                evaluations: manifest.evaluations,
                error: manifest.error.clone(),
            },
            problem: None,
            archive: None,
            base_evaluations: manifest.evaluations,
            elapsed_seconds: manifest.elapsed_seconds,
        };
        if !manifest.state.is_terminal() {
            run.record.state = RunState::Failed;
            run.record.error = Some("interrupted by a service restart".into());
            manifest.state = RunState::Failed;
            manifest.error = run.record.error.clone();
            if let Err(e) = manifest.save(&dir.join(MANIFEST_FILE)) {
                log::warn!("cannot update {}: {e}", dir.display());
            }
            return run;
        }
        if manifest.state == RunState::Finished {
            match load_finished(dir, &manifest, &self.opts.base_dir) {
                Ok((p, a)) => {
                    run.problem = Some(Arc::new(p));
                    run.archive = Some(Arc::new(a));
                }
                Err(e) => {
                    run.record.state = RunState::Failed;
                    run.record.error = Some(format!("cannot restore archive: {e}"));
                }
            }
        }
        run
    }

    pub fn register_problem(&self, body: &[u8]) -> Result<(String, Json), ApiError> {
        let text = std::str::from_utf8(body).map_err(|e| ApiError::invalid("", e.to_string()))?;
        let config = ProblemConfig::from_json(text).map_err(|e| ApiError::Invalid(e.fields()))?;
        let id = config.problem_id();
        if self.problems.read().unwrap().contains_key(&id) {
            return Ok((id, Json::Bool(false)));
        }
        // full validation, including the dataset
        AnyProblem::build(&config, &self.opts.base_dir, None).map_err(|e| ApiError::Invalid(e.fields()))?;
        write_atomic(&self.problems_dir().join(format!("{id}.json")), config.to_pretty_json().as_bytes())
            .map_err(internal)?;
        self.problems.write().unwrap().insert(id.clone(), Arc::new(config));
        Ok((id, Json::Bool(true)))
    }

    pub fn problem(&self, id: &str) -> Option<Arc<ProblemConfig>> {
        self.problems.read().unwrap().get(id).cloned()
    }

    /// Registers a pending run. The caller schedules it with [`Registry::spawn`].
    pub fn create_run(&self, req: RunRequest) -> Result<(RunRecord, Arc<ProblemConfig>), ApiError> {
        let problem = self
            .problem(&req.problem_id)
            .ok_or_else(|| ApiError::NotFound(format!("no problem `{}`", req.problem_id)))?;
        let mut optimizer = req.optimizer.unwrap_or_else(|| problem.optimizer.clone());
        if let Some(seed) = req.seed {
            optimizer.seed = seed;
        }
        optimizer.validate().map_err(|m| ApiError::invalid("optimizer", m))?;

        let mut runs = self.runs.write().unwrap();
        if let Some(dup) = runs.values().find(|r| {
            !r.record.state.is_terminal() && r.record.problem_id == req.problem_id && r.record.optimizer == optimizer
        }) {
            return Err(ApiError::Conflict(format!(
                "run {} with the same problem, config and seed is still active",
                dup.record.run_id
            )));
        }
        let record = RunRecord {
            run_id: uuid::Uuid::new_v4().simple().to_string(),
            problem_id: req.problem_id,
            state: RunState::Pending,
            optimizer,
            created_at: now(),
            finished_at: None,
            progress: None,
            archive_size: None,
            evaluations: 0,
            error: None,
        };
        let run = Run {
            record: record.clone(),
            problem: None,
            archive: None,
            base_evaluations: 0,
            elapsed_seconds: 0.0,
        };
        fs::create_dir_all(self.run_dir(&record.run_id)).map_err(internal)?;
        self.write_manifest(&run, "", None).map_err(internal)?;
        runs.insert(record.run_id.clone(), run);
        Ok((record, problem))
    }

    /// Queues the optimization on the blocking pool behind the run-cap semaphore.
    pub fn spawn(self: &Arc<Self>, run_id: String, config: Arc<ProblemConfig>) {
        let registry = Arc::clone(self);
        tokio::spawn(async move {
            let permit = Arc::clone(&registry.permits).acquire_owned().await;
            let worker = Arc::clone(&registry);
            let id = run_id.clone();
            let joined = tokio::task::spawn_blocking(move || worker.execute(&id, &config)).await;
            drop(permit);
            if let Err(e) = joined {
                registry.finish(&run_id, RunState::Failed, None, Some(format!("run task failed: {e}")));
            }
        });
    }

    fn update<R>(&self, id: &str, f: impl FnOnce(&mut Run) -> R) -> Option<R> {
        self.runs.write().unwrap().get_mut(id).map(f)
    }

    fn execute(&self, run_id: &str, config: &ProblemConfig) {
        let start = Instant::now();
        let Some(optimizer) = self.update(run_id, |r| {
            r.record.state = RunState::Running;
            r.record.optimizer.clone()
        }) else {
            return;
        };
        let stored = config.with_resolved_dataset(&self.opts.base_dir, None);
        let dir = self.run_dir(run_id);
        if let Err(e) = write_atomic(&dir.join(PROBLEM_FILE), stored.to_pretty_json().as_bytes()) {
            self.finish(run_id, RunState::Failed, None, Some(e.to_string()));
            return;
        }
        let problem = match AnyProblem::build(&stored, &self.opts.base_dir, None) {
            Ok((p, _)) => Arc::new(p),
            Err(e) => {
                self.finish(run_id, RunState::Failed, None, Some(e.to_string()));
                return;
            }
        };
        self.update(run_id, |r| r.problem = Some(Arc::clone(&problem)));
        log::info!("run {run_id} started");
        let outcome = problem.optimize(&optimizer, &mut |p| {
            self.update(run_id, |r| r.record.progress = Some(*p));
        });
        let elapsed = start.elapsed().as_secs_f64();
        self.update(run_id, |r| r.elapsed_seconds = elapsed);
        let (state, archive, error) = match outcome {
            Ok(a) => (RunState::Finished, Some(a), None),
            Err(RunFailure::Config(m)) => (RunState::Failed, None, Some(m)),
            Err(RunFailure::Aborted {
                generation,
                partial,
                message,
            }) => (
                RunState::Failed,
                Some(partial),
                Some(format!("aborted in generation {generation}: {message}")),
            ),
        };
        log::info!("run {run_id} {:?} after {elapsed:.2}s", state);
        self.finish(run_id, state, archive, error);
    }

    /// Persists the archive and manifest, then publishes the terminal state.
    fn finish(&self, run_id: &str, mut state: RunState, archive: Option<AnyArchive>, mut error: Option<String>) {
        let dir = self.run_dir(run_id);
        let problem = self.update(run_id, |r| r.problem.clone()).flatten();
        let mut archive_text = None;
        if let (Some(p), Some(a)) = (&problem, &archive) {
            match p.archive_json(a) {
                Ok(text) => {
                    if let Err(e) = write_atomic(&dir.join(ARCHIVE_FILE), text.as_bytes()) {
                        state = RunState::Failed;
                        error = Some(format!("cannot write archive: {e}"));
                    } else {
                        archive_text = Some(text);
                    }
                }
                Err(e) => {
                    state = RunState::Failed;
                    error = Some(e.to_string());
                }
            }
        }
        let mut runs = self.runs.write().unwrap();
        let Some(run) = runs.get_mut(run_id) else {
            return;
        };
        run.record.state = state;
        run.record.error = error;
        run.record.finished_at = Some(now());
        run.record.archive_size = archive.as_ref().map(AnyArchive::len);
        if state == RunState::Finished {
            run.archive = archive.map(Arc::new);
        }
        let hash = problem.as_ref().map_or(String::new(), |p| p.problem_hash().to_string());
        if let Err(e) = self.write_manifest(run, &hash, archive_text.as_deref()) {
            log::error!("cannot write manifest for run {run_id}: {e}");
        }
    }

    fn write_manifest(&self, run: &Run, problem_hash: &str, archive_text: Option<&str>) -> io::Result<()> {
        let r = run.snapshot();
        let manifest = RunManifest {
            run_id: r.run_id.clone(),
            state: r.state,
            problem_id: r.problem_id.clone(),
            problem_hash: problem_hash.to_string(),
            config_path: None,
            dataset_path: None,
            problem_file: PROBLEM_FILE.into(),
            archive_file: archive_text.map(|_| ARCHIVE_FILE.into()),
            archive_sha256: archive_text.map(|t| sha256_hex(t.as_bytes())),
            seed: r.optimizer.seed,
            optimizer: r.optimizer.clone(),
            created_at: r.created_at.clone(),
            finished_at: r.finished_at.clone(),
            elapsed_seconds: run.elapsed_seconds,
            generations_completed: r.progress.map_or(0, |p| p.generation),
            archive_size: r.archive_size.unwrap_or(0),
            evaluations: r.evaluations,
            error: r.error.clone(),
        };
        manifest.save(&self.run_dir(&r.run_id).join(MANIFEST_FILE))
    }

    pub fn run(&self, id: &str) -> Option<RunRecord> {
        self.runs.read().unwrap().get(id).map(Run::snapshot)
    }

    /// Newest first.
    pub fn list_runs(&self) -> Vec<RunRecord> {
        let mut all: Vec<RunRecord> = self.runs.read().unwrap().values().map(Run::snapshot).collect();
        all.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.run_id.cmp(&b.run_id)));
        all
    }

    fn finished(&self, id: &str) -> Result<(Arc<AnyProblem>, Arc<AnyArchive>), ApiError> {
        let runs = self.runs.read().unwrap();
        let run = runs.get(id).ok_or_else(|| not_found(id))?;
        match (&run.record.state, &run.problem, &run.archive) {
            (RunState::Finished, Some(p), Some(a)) => Ok((Arc::clone(p), Arc::clone(a))),
            (state, ..) => Err(ApiError::Conflict(format!("run {id} is {}", state_name(*state)))),
        }
    }

    /// Read-only: never touches run state, the archive, or the predictors.
    pub fn sample(&self, id: &str, request: &SamplingRequest) -> Result<Json, ApiError> {
        let (problem, archive) = self.finished(id)?;
        let out = problem.sample(&archive, request).map_err(|e| match e {
            SampleError::NoValidCounterfactuals => ApiError::Conflict(e.to_string()),
            SampleError::Archive(_) => internal(e),
            other => ApiError::invalid("", other.to_string()),
        })?;
        let mut doc = out.json;
        doc["run_id"] = json!(id);
        doc["request"] = serde_json::to_value(request).map_err(internal)?;
        doc["evaluations"] = json!(self.run(id).map_or(0, |r| r.evaluations));
        Ok(doc)
    }

    pub fn candidates(&self, id: &str, offset: usize, limit: usize) -> Result<Json, ApiError> {
        let (problem, archive) = self.finished(id)?;
        let entries = problem.page(&archive, offset, limit).map_err(internal)?;
        Ok(json!({
            "run_id": id,
            "total": archive.len(),
            "offset": offset,
            "limit": limit,
            "entries": entries,
        }))
    }
}

fn state_name(s: RunState) -> &'static str {
    match s {
        RunState::Pending => "pending",
        RunState::Running => "running",
        RunState::Finished => "finished",
        RunState::Failed => "failed",
    }
}

fn load_finished(dir: &Path, manifest: &RunManifest, base_dir: &Path) -> Result<(AnyProblem, AnyArchive), String> {
    let config = ProblemConfig::load(&dir.join(&manifest.problem_file)).map_err(|e| e.to_string())?;
    let (problem, _) = AnyProblem::build(&config, base_dir, None).map_err(|e| e.to_string())?;
    let file = manifest.archive_file.as_ref().ok_or("manifest names no archive")?;
    let text = fs::read_to_string(dir.join(file)).map_err(|e| e.to_string())?;
    if !manifest.verify_archive_bytes(text.as_bytes()) {
        return Err("archive digest does not match the manifest".into());
    }
    let archive = problem.load_archive(&text).map_err(|e| e.to_string())?;
    Ok((problem, archive))
}
