//! The `mcd` command line.

pub mod args;

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mcd_core::bench2d;
use mcd_core::config::{ConfigError, DatasetSource, ProblemConfig};
use mcd_core::manifest::{sha256_hex, write_atomic, RunManifest, RunState, ARCHIVE_FILE, MANIFEST_FILE, PROBLEM_FILE};
use mcd_core::optimizer::ArchiveError;
use mcd_core::predictors::{build_predictor, serve_worker, Backend, PredictorSpec};
use mcd_core::sampler::{SampleError, SamplingRequest, SweepSpec, Target};
use mcd_core::study::{AnyArchive, AnyProblem, RunFailure};

pub const EXIT_OK: i32 = 0;
/// I/O and other failures outside the documented categories.
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PREDICTOR: i32 = 3;
pub const EXIT_ARCHIVE: i32 = 4;
pub const EXIT_EMPTY: i32 = 5;

pub const LOG_ENV: &str = "MCD_LOG";

#[derive(Debug, Parser)]
#[command(name = "mcd", version, about = "Multi-objective counterfactuals for design problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a problem and write its candidate archive.
    Run(RunArgs),
    /// Select counterfactuals from an archive under new weights.
    Sample(SampleArgs),
    /// Best candidate per cell over scheduled weight grids.
    Sweep(SweepArgs),
    /// Write the 2D benchmark dataset, feasibility mask and config.
    Bench2d(Bench2dArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Serve a builtin predictor over the subprocess line protocol on stdin/stdout.
    Worker(WorkerArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// CSV that replaces the config's dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "mcd-out")]
    pub out: PathBuf,
    /// Overrides the optimizer seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    #[arg(long)]
    pub archive: PathBuf,
    /// Problem config; defaults to the copy stored next to the archive.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to the archive's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "w-proximity")]
    pub w_proximity: Option<f64>,
    #[arg(long = "w-sparsity")]
    pub w_sparsity: Option<f64>,
    #[arg(long = "w-manifold")]
    pub w_manifold: Option<f64>,
    #[arg(long = "w-diversity")]
    pub w_diversity: Option<f64>,
    /// objective=value[:alpha=a][:beta=b][:direction=min|max]; repeatable.
    #[arg(long = "target", value_parser = args::parse_target)]
    pub targets: Vec<Target>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// key=expr;... over i, j (1-based), m, n. A bare expression sets all three quality weights.
    #[arg(long = "row-schedule", default_value = "")]
    pub row_schedule: String,
    #[arg(long = "col-schedule", default_value = "")]
    pub col_schedule: String,
}

#[derive(Debug, Args)]
pub struct Bench2dArgs {
    #[arg(long, default_value = "bench2d")]
    pub out: PathBuf,
    /// D1, D2 or D3.
    #[arg(long, default_value = "D2")]
    pub query: String,
    #[arg(long, default_value_t = 512)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = mcd_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long = "data-dir", default_value = "mcd-data")]
    pub data_dir: PathBuf,
    #[arg(long = "no-cors")]
    pub no_cors: bool,
    #[arg(long = "max-concurrent-runs", default_value_t = 1)]
    pub max_concurrent_runs: usize,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    /// Builtin function id.
    #[arg(long, default_value = "bench2d")]
    pub predictor: String,
    /// Design schema JSON; defaults to the benchmark's two features.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    fn io(context: &Path, e: io::Error) -> Self {
        CliError::new(EXIT_FAILURE, format!("{}: {e}", context.display()))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(EXIT_CONFIG, format!("invalid config: {e}"))
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        let code = match &e {
            SampleError::NoValidCounterfactuals => EXIT_EMPTY,
            SampleError::Archive(a) => archive_code(a),
            _ => EXIT_CONFIG,
        };
        CliError::new(code, e.to_string())
    }
}

fn archive_code(e: &ArchiveError) -> i32 {
    match e {
        ArchiveError::HashMismatch { .. } | ArchiveError::Scalar { .. } => EXIT_ARCHIVE,
        _ => EXIT_CONFIG,
    }
}

type CliResult = Result<(), CliError>;

/// Parses `args` (including the program name), runs the command and returns the exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).try_init();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Bench2d(a) => cmd_bench2d(&a),
        Command::Serve(a) => cmd_serve(&a),
        Command::Worker(a) => cmd_worker(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn cmd_run(a: &RunArgs) -> CliResult {
    let mut config = ProblemConfig::load(&a.config).map_err(|e| match e {
        ConfigError::Io { .. } => CliError::new(EXIT_CONFIG, e.to_string()),
        e => e.into(),
    })?;
    if let Some(seed) = a.seed {
        config.optimizer.seed = seed;
    }
    let base = parent_dir(&a.config);
    let (problem, dataset_path) = AnyProblem::build(&config, &base, a.dataset.as_deref())?;
    let stored = config.with_resolved_dataset(&base, a.dataset.as_deref());

    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    write_atomic(&a.out.join(PROBLEM_FILE), stored.to_pretty_json().as_bytes()).map_err(|e| CliError::io(&a.out, e))?;

    let created_at = now();
    let start = Instant::now();
    let optimizer = config.optimizer.clone();
    log::info!(
        "optimizing: population {}, generations {}, seed {}",
        optimizer.population_size,
        optimizer.generations,
        optimizer.seed
    );
    let mut last_generation = 0;
    let outcome = problem.optimize(&optimizer, &mut |p| {
        last_generation = p.generation;
        log::debug!(
            "generation {}: {} feasible, archive {}, {} evaluations",
            p.generation,
            p.feasible,
            p.archive_size,
            p.evaluations
        );
    });
    let (archive, failure): (Option<AnyArchive>, Option<CliError>) = match outcome {
        Ok(archive) => (Some(archive), None),
        Err(RunFailure::Config(m)) => (None, Some(CliError::new(EXIT_CONFIG, m))),
        Err(RunFailure::Aborted {
            generation,
            partial,
            message,
        }) => (
            Some(partial),
            Some(CliError::new(
                EXIT_PREDICTOR,
                format!("predictor failure in generation {generation}: {message}"),
            )),
        ),
    };
    if failure.as_ref().is_some_and(|f| f.code == EXIT_CONFIG) {
        return Err(failure.unwrap());
    }
    let archive = archive.expect("archive present unless the config was rejected");
    let text = problem
        .archive_json(&archive)
        .map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))?;
    let archive_path = a.out.join(ARCHIVE_FILE);
    write_atomic(&archive_path, text.as_bytes()).map_err(|e| CliError::io(&archive_path, e))?;

    let manifest = RunManifest {
        run_id: format!("{}-{}", &problem.problem_hash()[..12], optimizer.seed),
        state: if failure.is_some() { RunState::Failed } else { RunState::Finished },
        problem_id: stored.problem_id(),
        problem_hash: problem.problem_hash().to_string(),
        config_path: Some(fs::canonicalize(&a.config).unwrap_or_else(|_| a.config.clone())),
        dataset_path: dataset_path.map(|p| fs::canonicalize(&p).unwrap_or(p)),
        problem_file: PROBLEM_FILE.into(),
        archive_file: Some(ARCHIVE_FILE.into()),
        archive_sha256: Some(sha256_hex(text.as_bytes())),
        seed: optimizer.seed,
        optimizer: optimizer.clone(),
        created_at,
        finished_at: Some(now()),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        generations_completed: last_generation,
        archive_size: archive.len(),
        evaluations: problem.evaluations(),
        error: failure.as_ref().map(|f| f.message.clone()),
    };
    let manifest_path = a.out.join(MANIFEST_FILE);
    manifest.save(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
    if let Some(f) = failure {
        return Err(f);
    }
    println!(
        "{} candidates in {:.2}s ({} evaluations) -> {}",
        archive.len(),
        manifest.elapsed_seconds,
        manifest.evaluations,
        archive_path.display()
    );
    Ok(())
}

/// An archive with the problem it belongs to.
pub struct Loaded {
    pub problem: AnyProblem,
    pub archive: AnyArchive,
    pub config: ProblemConfig,
    pub out: PathBuf,
}

/// Resolves the problem for `--archive`, from `--config` or the run directory's copy.
pub fn load_archive(w: &WeightArgs) -> Result<Loaded, CliError> {
    let dir = parent_dir(&w.archive);
    let text = fs::read_to_string(&w.archive).map_err(|e| CliError::io(&w.archive, e))?;
    let manifest = RunManifest::load(&dir.join(MANIFEST_FILE)).ok();
    if let Some(m) = &manifest {
        if !m.verify_archive_bytes(text.as_bytes()) {
            return Err(CliError::new(EXIT_ARCHIVE, "archive does not match the digest in its manifest"));
        }
    }
    let (config, base, dataset) = match &w.config {
        Some(path) => {
            let c = ProblemConfig::load(path).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
            let dataset = match (&c.dataset, &manifest) {
                (DatasetSource::Csv { .. }, Some(m)) => m.dataset_path.clone(),
                _ => None,
            };
            (c, parent_dir(path), dataset)
        }
        None => {
            let file = manifest.as_ref().map_or_else(|| PROBLEM_FILE.into(), |m| m.problem_file.clone());
            let path = dir.join(file);
            if !path.exists() {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!("no problem config at {}; pass --config", path.display()),
                ));
            }
            let c = ProblemConfig::load(&path).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
            (c, dir.clone(), None)
        }
    };
    let (problem, _) = AnyProblem::build(&config, &base, dataset.as_deref())?;
    let archive = problem
        .load_archive(&text)
        .map_err(|e| CliError::new(archive_code(&e), e.to_string()))?;
    let out = w.out.clone().unwrap_or(dir);
    Ok(Loaded {
        problem,
        archive,
        config,
        out,
    })
}

/// Weight flags over a base request. Without any objective weight or target the
/// config's sampling section (or the balanced setting) supplies the weights.
pub fn build_request(w: &WeightArgs, config: &ProblemConfig, count: usize) -> SamplingRequest {
    let explicit = w.w_proximity.is_some() || w.w_sparsity.is_some() || w.w_manifold.is_some() || !w.targets.is_empty();
    let mut req = if explicit {
        SamplingRequest::new(
            w.w_proximity.unwrap_or(0.0),
            w.w_sparsity.unwrap_or(0.0),
            w.w_manifold.unwrap_or(0.0),
            0.2,
            count,
        )
    } else {
        config.sampling.clone().unwrap_or_else(|| SamplingRequest::balanced(count))
    };
    if let Some(d) = w.w_diversity {
        req.w_d = d;
    }
    req.targets = if explicit { w.targets.clone() } else { req.targets };
    req.count = count;
    req
}

fn write_output(dir: &Path, name: &str, contents: &str) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    write_atomic(&path, contents.as_bytes()).map_err(|e| CliError::io(&path, e))
}

pub fn cmd_sample(a: &SampleArgs) -> CliResult {
    let loaded = load_archive(&a.weights)?;
    let request = build_request(&a.weights, &loaded.config, a.count);
    if loaded.archive.is_empty() {
        return Err(SampleError::NoValidCounterfactuals.into());
    }
    let out = loaded.problem.sample(&loaded.archive, &request)?;
    let mut json = serde_json::to_string_pretty(&out.json).expect("set serializes");
    json.push('\n');
    write_output(&loaded.out, "samples.csv", &out.csv)?;
    write_output(&loaded.out, "samples.json", &json)?;
    print!("{}", out.csv);
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> CliResult {
    let bad = |m: String| CliError::new(EXIT_CONFIG, m);
    if a.rows == 0 || a.cols == 0 {
        return Err(bad("--rows and --cols must be at least 1".into()));
    }
    let schedule = SweepSpec {
        rows: a.rows,
        cols: a.cols,
        row: args::parse_schedule(&a.row_schedule).map_err(bad)?,
        col: args::parse_schedule(&a.col_schedule).map_err(bad)?,
    };
    let loaded = load_archive(&a.weights)?;
    let base = build_request(&a.weights, &loaded.config, 1);
    if loaded.archive.is_empty() {
        return Err(SampleError::NoValidCounterfactuals.into());
    }
    let csv = loaded.problem.sweep(&loaded.archive, &schedule, &base)?;
    write_output(&loaded.out, "sweep.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_bench2d(a: &Bench2dArgs) -> CliResult {
    let mut config = bench2d::config(&a.query)
        .ok_or_else(|| CliError::new(EXIT_CONFIG, format!("unknown query `{}`; use D1, D2 or D3", a.query)))?;
    if a.resolution == 0 {
        return Err(CliError::new(EXIT_CONFIG, "--resolution must be at least 1"));
    }
    let data: mcd_core::Dataset = bench2d::default_dataset();
    write_output(&a.out, "dataset.csv", &data.to_csv())?;
    config.dataset = DatasetSource::Csv {
        path: "dataset.csv".into(),
    };
    write_output(&a.out, "config.json", &config.to_pretty_json())?;

    let grid = bench2d::feasible_components(a.resolution, bench2d::Thresholds::default());
    let pgm = a.out.join("feasible.pgm");
    let file = fs::File::create(&pgm).map_err(|e| CliError::io(&pgm, e))?;
    grid.write_pgm(BufWriter::new(file)).map_err(|e| CliError::io(&pgm, e))?;
    let n = a.resolution as f64;
    println!("{} feasible components at {}x{}", grid.count(), a.resolution, a.resolution);
    for (k, b) in grid.boxes.iter().enumerate() {
        println!(
            "  {}: x1 [{:.4}, {:.4}]  x2 [{:.4}, {:.4}]",
            k + 1,
            b.min_i as f64 / n,
            (b.max_i + 1) as f64 / n,
            b.min_j as f64 / n,
            (b.max_j + 1) as f64 / n
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn cmd_serve(a: &ServeArgs) -> CliResult {
    let opts = mcd_service::ServiceOptions {
        data_dir: a.data_dir.clone(),
        max_concurrent_runs: a.max_concurrent_runs.max(1),
        base_dir: PathBuf::from("."),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))?;
    runtime
        .block_on(mcd_service::serve(opts, a.port, !a.no_cors))
        .map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))
}

pub fn cmd_worker(a: &WorkerArgs) -> CliResult {
    let schema: mcd_core::DesignSchema = match &a.schema {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            mcd_core::DesignSchema::from_json(&text).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?
        }
        None => bench2d::schema(),
    };
    let spec = PredictorSpec {
        name: a.predictor.clone(),
        channels: Vec::new(),
        backend: Backend::Builtin(a.predictor.clone()),
    };
    let predictor = build_predictor::<f64>(&spec).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
    let stdin = io::stdin();
    serve_worker(predictor.as_ref(), &schema, stdin.lock(), io::stdout().lock())
        .map_err(|e| CliError::new(EXIT_PREDICTOR, e.to_string()))
}
