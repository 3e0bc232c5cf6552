//! Scalar-erased problem and archive handles for front ends that choose the
//! precision from a config file at run time.

use std::path::{Path, PathBuf};

use serde_json::Value as Json;

use crate::config::{ConfigError, ProblemConfig, ScalarKind};
use crate::optimizer::{run_optimization, ArchiveError, CandidateArchive, OptimizationError, OptimizerConfig, Progress};
use crate::problem::ProblemSpec;
use crate::sampler::{sample, set_to_csv, set_to_json, sweep, sweep_to_csv, SampleError, SamplingRequest, SweepSpec};
use crate::scalar::Scalar;

pub enum AnyProblem {
    F64(ProblemSpec<f64>),
    F32(ProblemSpec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyArchive {
    F64(CandidateArchive<f64>),
    F32(CandidateArchive<f32>),
}

#[derive(Debug)]
pub enum RunFailure {
    Config(String),
    /// A predictor failed; `partial` holds what was archived before it.
    Aborted {
        generation: usize,
        partial: AnyArchive,
        message: String,
    },
}

/// A sampled set rendered for output.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub len: usize,
    pub json: Json,
    pub csv: String,
}

macro_rules! on_problem {
    ($p:expr, $s:ident => $body:expr) => {
        match $p {
            AnyProblem::F64($s) => $body,
            AnyProblem::F32($s) => $body,
        }
    };
}

macro_rules! on_archive {
    ($a:expr, $s:ident => $body:expr) => {
        match $a {
            AnyArchive::F64($s) => $body,
            AnyArchive::F32($s) => $body,
        }
    };
}

/// Matches a problem with an archive of the same precision.
macro_rules! on_pair {
    ($p:expr, $a:expr, ($s:ident, $r:ident) => $body:expr) => {
        match ($p, $a) {
            (AnyProblem::F64($s), AnyArchive::F64($r)) => $body,
            (AnyProblem::F32($s), AnyArchive::F32($r)) => $body,
            (p, _) => Err(ArchiveError::Scalar {
                expected: p.scalar_name(),
                found: if p.scalar_name() == "f64" { "f32".into() } else { "f64".into() },
            }
            .into()),
        }
    };
}

fn optimize<S: Scalar>(
    spec: &ProblemSpec<S>,
    config: &OptimizerConfig,
    progress: &mut dyn FnMut(&Progress),
    wrap: fn(CandidateArchive<S>) -> AnyArchive,
) -> Result<AnyArchive, RunFailure> {
    match run_optimization(spec, config, progress) {
        Ok(a) => Ok(wrap(a)),
        Err(OptimizationError::Config(m)) => Err(RunFailure::Config(m)),
        Err(OptimizationError::Aborted {
            generation,
            archive,
            source,
        }) => Err(RunFailure::Aborted {
            generation,
            partial: wrap(*archive),
            message: source.to_string(),
        }),
    }
}

fn sample_one<S: Scalar>(
    spec: &ProblemSpec<S>,
    archive: &CandidateArchive<S>,
    request: &SamplingRequest,
) -> Result<SampleOutput, SampleError> {
    let set = sample(archive, request, spec)?;
    Ok(SampleOutput {
        len: set.len(),
        json: set_to_json(spec, &set),
        csv: set_to_csv(spec, &set),
    })
}

impl AnyProblem {
    /// Builds at the precision named by the config. Returns the resolved dataset path.
    pub fn build(
        config: &ProblemConfig,
        base_dir: &Path,
        dataset_override: Option<&Path>,
    ) -> Result<(Self, Option<PathBuf>), ConfigError> {
        Ok(match config.scalar {
            ScalarKind::F64 => {
                let b = config.build::<f64>(base_dir, dataset_override)?;
                (AnyProblem::F64(b.spec), b.dataset_path)
            }
            ScalarKind::F32 => {
                let b = config.build::<f32>(base_dir, dataset_override)?;
                (AnyProblem::F32(b.spec), b.dataset_path)
            }
        })
    }

    pub fn scalar_name(&self) -> &'static str {
        match self {
            AnyProblem::F64(_) => f64::NAME,
            AnyProblem::F32(_) => f32::NAME,
        }
    }

    pub fn problem_hash(&self) -> &str {
        on_problem!(self, s => s.problem_hash())
    }

    /// Predictor evaluations performed so far through this problem.
    pub fn evaluations(&self) -> u64 {
        on_problem!(self, s => s.evaluations())
    }

    pub fn optimize(&self, config: &OptimizerConfig, progress: &mut dyn FnMut(&Progress)) -> Result<AnyArchive, RunFailure> {
        match self {
            AnyProblem::F64(s) => optimize(s, config, progress, AnyArchive::F64),
            AnyProblem::F32(s) => optimize(s, config, progress, AnyArchive::F32),
        }
    }

    /// Parses an archive file and checks it belongs to this problem.
    pub fn load_archive(&self, text: &str) -> Result<AnyArchive, ArchiveError> {
        Ok(match self {
            AnyProblem::F64(s) => AnyArchive::F64(CandidateArchive::load_verified(text, s.schema(), s.problem_hash())?),
            AnyProblem::F32(s) => AnyArchive::F32(CandidateArchive::load_verified(text, s.schema(), s.problem_hash())?),
        })
    }

    pub fn archive_json(&self, archive: &AnyArchive) -> Result<String, ArchiveError> {
        on_pair!(self, archive, (s, a) => Ok(a.to_json(s.schema())))
    }

    pub fn sample(&self, archive: &AnyArchive, request: &SamplingRequest) -> Result<SampleOutput, SampleError> {
        on_pair!(self, archive, (s, a) => sample_one(s, a, request))
    }

    /// Grid CSV of the best candidate per cell.
    pub fn sweep(&self, archive: &AnyArchive, schedule: &SweepSpec, base: &SamplingRequest) -> Result<String, SampleError> {
        on_pair!(self, archive, (s, a) => sweep(a, s, schedule, base).map(|g| sweep_to_csv(s, &g)))
    }

    /// Entries `offset..offset+limit` in archive-file form.
    pub fn page(&self, archive: &AnyArchive, offset: usize, limit: usize) -> Result<Vec<Json>, ArchiveError> {
        on_pair!(self, archive, (s, a) => Ok(a.page_json(s.schema(), offset, limit)))
    }
}

impl AnyArchive {
    pub fn len(&self) -> usize {
        on_archive!(self, a => a.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn problem_hash(&self) -> &str {
        on_archive!(self, a => a.problem_hash())
    }

    pub fn truncate(&mut self, n: usize) {
        on_archive!(self, a => a.truncate(n))
    }
}
