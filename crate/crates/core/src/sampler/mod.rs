//! Post-hoc sampling over a finished archive. Weights and targets are chosen
//! after optimization and never trigger predictor calls.

mod dtai;
mod export;
mod select;
mod sweep;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design_space::DesignPoint;
use crate::objectives::{Direction, ObjectiveValues};
use crate::optimizer::{ArchiveError, CandidateArchive};
use crate::problem::ProblemSpec;
use crate::scalar::Scalar;

pub use export::{counterfactual_to_json, csv_header, csv_row, set_to_csv, set_to_json, sweep_to_csv};
pub use dtai::{achievement_ratio, dtai_from_ratios, target_score, validate_targets, Target, RATIO_FLOOR};
pub use select::{diversity_matrix, k_greedy_sample, quality_weight, DiversityKernel, DiversityMatrix, LazyDiversity};
pub use sweep::{eval_schedule, sweep, Overrides, SweepCell, SweepGrid, SweepSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("no valid counterfactuals")]
    NoValidCounterfactuals,
    #[error("invalid sampling request: {0}")]
    InvalidRequest(String),
    #[error("target references unknown objective `{0}`")]
    UnknownObjective(String),
    #[error("cannot evaluate schedule expression `{expr}`: {message}")]
    Expression { expr: String, message: String },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

fn default_w_d() -> f64 {
    0.2
}

fn default_count() -> usize {
    1
}

/// Objective priority weights, diversity weight and optional targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingRequest {
    #[serde(default)]
    pub w_pr: f64,
    #[serde(default)]
    pub w_sp: f64,
    #[serde(default)]
    pub w_mp: f64,
    #[serde(default = "default_w_d")]
    pub w_d: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<Target>,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Recorded for provenance; selection is fully deterministic without it.
    #[serde(default)]
    pub seed: u64,
}

impl SamplingRequest {
    pub fn new(w_pr: f64, w_sp: f64, w_mp: f64, w_d: f64, count: usize) -> Self {
        SamplingRequest {
            w_pr,
            w_sp,
            w_mp,
            w_d,
            targets: Vec::new(),
            count,
            seed: 0,
        }
    }

    /// The evenly weighted regime used as the comparison baseline.
    pub fn balanced(count: usize) -> Self {
        SamplingRequest::new(0.5, 0.2, 0.5, 0.2, count)
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        let bad = |m: String| Err(SampleError::InvalidRequest(m));
        for (name, w) in [("w_pr", self.w_pr), ("w_sp", self.w_sp), ("w_mp", self.w_mp)] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {w}"));
            }
        }
        if !(self.w_d.is_finite() && self.w_d > 0.0) {
            return bad(format!("w_d must be positive and finite, got {}", self.w_d));
        }
        if self.count == 0 {
            return bad("count must be at least 1".into());
        }
        if self.w_pr == 0.0 && self.w_sp == 0.0 && self.w_mp == 0.0 && self.targets.is_empty() {
            return bad("at least one objective weight or target is required".into());
        }
        Ok(())
    }
}

/// One selected counterfactual.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual<S> {
    /// Position in the archive.
    pub index: usize,
    pub point: DesignPoint<S>,
    pub objectives: ObjectiveValues<S>,
    pub channels: Vec<S>,
    pub quality: f64,
    pub dtai: Option<f64>,
    /// Achievement ratio per request target.
    pub ratios: Vec<f64>,
}

/// Selected counterfactuals in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualSet<S> {
    pub entries: Vec<Counterfactual<S>>,
}

impl<S> CounterfactualSet<S> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Where a target reads its value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Auxiliary(usize),
    Channel(usize),
}

#[derive(Debug, Clone)]
struct Resolved {
    source: Source,
    direction: Direction,
}

fn resolve<S: Scalar>(spec: &ProblemSpec<S>, targets: &[Target]) -> Result<Vec<Resolved>, SampleError> {
    let resolved = targets
        .iter()
        .map(|t| {
            if let Some(i) = spec.aux_objectives().iter().position(|o| o.name == t.objective) {
                return Ok(Resolved {
                    source: Source::Auxiliary(i),
                    direction: spec.aux_objectives()[i].direction,
                });
            }
            let i = spec
                .channels()
                .iter()
                .position(|c| *c == t.objective)
                .ok_or_else(|| SampleError::UnknownObjective(t.objective.clone()))?;
            let direction = t.direction.ok_or_else(|| {
                SampleError::InvalidRequest(format!("target on channel `{}` needs an explicit direction", t.objective))
            })?;
            Ok(Resolved {
                source: Source::Channel(i),
                direction,
            })
        })
        .collect::<Result<Vec<_>, SampleError>>()?;
    let directions: Vec<Direction> = resolved.iter().map(|r| r.direction).collect();
    validate_targets(targets, &directions).map_err(SampleError::InvalidRequest)?;
    Ok(resolved)
}

/// Scores every archive entry under `request`: quality, DTAI (when targeted)
/// and per-target ratios.
struct Scored {
    quality: Vec<f64>,
    dtai: Vec<Option<f64>>,
    ratios: Vec<Vec<f64>>,
}

fn score<S: Scalar>(spec: &ProblemSpec<S>, archive: &CandidateArchive<S>, request: &SamplingRequest) -> Result<Scored, SampleError> {
    let resolved = resolve(spec, &request.targets)?;
    let aux = spec.aux_objectives();
    let per_entry: Vec<(f64, Option<f64>, Vec<f64>)> = archive
        .entries()
        .par_iter()
        .map(|e| {
            let ratios: Vec<f64> = resolved
                .iter()
                .zip(&request.targets)
                .map(|(r, t)| {
                    let value = match r.source {
                        Source::Auxiliary(i) => aux[i].from_minimized(e.objectives.auxiliary[i]).as_f64(),
                        Source::Channel(i) => e.channels[i].as_f64(),
                    };
                    achievement_ratio(value, t.target, r.direction)
                })
                .collect();
            let dtai = (!ratios.is_empty()).then(|| dtai_from_ratios(&ratios, &request.targets));
            let q = quality_score(
                [
                    e.objectives.proximity.as_f64(),
                    e.objectives.sparsity.as_f64(),
                    e.objectives.manifold.as_f64(),
                ],
                dtai,
                request,
            );
            (q, dtai, ratios)
        })
        .collect();
    let mut scored = Scored {
        quality: Vec::with_capacity(per_entry.len()),
        dtai: Vec::with_capacity(per_entry.len()),
        ratios: Vec::with_capacity(per_entry.len()),
    };
    for (q, d, r) in per_entry {
        scored.quality.push(q);
        scored.dtai.push(d);
        scored.ratios.push(r);
    }
    Ok(scored)
}

/// `Q = 1/(1+P)` with `P = w_pr·f_pr + w_sp·f_sp + w_mp·f_mp (+ 1 − max(DTAI, 0))`.
pub fn quality_score(objectives: [f64; 3], dtai: Option<f64>, request: &SamplingRequest) -> f64 {
    let [pr, sp, mp] = objectives;
    let mut penalty = request.w_pr * pr + request.w_sp * sp + request.w_mp * mp;
    if let Some(d) = dtai {
        penalty += 1.0 - d.max(0.0);
    }
    1.0 / (1.0 + penalty)
}

/// Selects a diverse, high-quality set from `archive`. Pure with respect to the
/// archive and the predictors.
pub fn sample<S: Scalar>(
    archive: &CandidateArchive<S>,
    request: &SamplingRequest,
    spec: &ProblemSpec<S>,
) -> Result<CounterfactualSet<S>, SampleError> {
    archive.verify_hash(spec.problem_hash())?;
    request.validate()?;
    if archive.is_empty() {
        return Err(SampleError::NoValidCounterfactuals);
    }
    let scored = score(spec, archive, request)?;
    let points: Vec<&DesignPoint<S>> = archive.entries().iter().map(|e| &e.point).collect();
    let kernel = LazyDiversity::new(points, spec.dataset().ranges(), &scored.quality, request.w_d);
    let picks = k_greedy_sample(&kernel, &scored.quality, request.count).ok_or(SampleError::NoValidCounterfactuals)?;
    Ok(CounterfactualSet {
        entries: picks
            .into_iter()
            .map(|i| {
                let e = &archive.entries()[i];
                Counterfactual {
                    index: i,
                    point: e.point.clone(),
                    objectives: e.objectives.clone(),
                    channels: e.channels.clone(),
                    quality: scored.quality[i],
                    dtai: scored.dtai[i],
                    ratios: scored.ratios[i].clone(),
                }
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench2d;
    use crate::optimizer::{run_optimization, OptimizerConfig};

    #[test]
    fn quality_examples() {
        let r = SamplingRequest::new(0.5, 0.0, 0.0, 1.0, 1);
        assert!((quality_score([0.4, 0.9, 0.9], None, &r) - 1.0 / 1.2).abs() < 1e-15);
        assert_eq!(quality_score([0.0, 0.0, 0.0], None, &r), 1.0);
        assert_eq!(quality_score([0.0, 0.0, 0.0], Some(1.0), &r), 1.0);
        assert_eq!(quality_score([0.0, 0.0, 0.0], Some(-3.0), &r), 0.5);
    }

    #[test]
    fn request_validation() {
        assert!(SamplingRequest::balanced(5).validate().is_ok());
        let mut r = SamplingRequest::balanced(5);
        r.count = 0;
        assert!(r.validate().is_err());
        let r = SamplingRequest::new(0.0, 0.0, 0.0, 1.0, 1);
        assert!(r.validate().is_err());
        let r = SamplingRequest::new(0.5, -1.0, 0.0, 1.0, 1);
        assert!(r.validate().is_err());
        let r = SamplingRequest::new(0.5, 0.0, 0.0, 0.0, 1);
        assert!(r.validate().is_err());
    }

    #[test]
    fn request_json_defaults() {
        let r: SamplingRequest = serde_json::from_str(r#"{"w_pr": 1}"#).unwrap();
        assert_eq!(r.w_d, 0.2);
        assert_eq!(r.count, 1);
        assert!(serde_json::from_str::<SamplingRequest>(r#"{"w_pr": 1, "bogus": 2}"#).is_err());
    }

    fn run() -> (ProblemSpec<f64>, CandidateArchive<f64>) {
        let spec = bench2d::problem(bench2d::default_dataset(), bench2d::query("D2").unwrap()).unwrap();
        let config = OptimizerConfig {
            population_size: 60,
            generations: 30,
            seed: 11,
            ..OptimizerConfig::default()
        };
        let archive = run_optimization(&spec, &config, &mut |_| {}).unwrap();
        (spec, archive)
    }

    #[test]
    fn sampling_never_calls_predictors() {
        let (spec, archive) = run();
        let before = spec.evaluations();
        for w in [0.2, 2.0, 20.0] {
            let set = sample(&archive, &SamplingRequest::new(0.5, 0.2, 0.5, w, 5), &spec).unwrap();
            assert_eq!(set.len(), 5.min(archive.len()));
            let mut idx: Vec<_> = set.entries.iter().map(|c| c.index).collect();
            idx.sort();
            idx.dedup();
            assert_eq!(idx.len(), set.len());
        }
        assert_eq!(spec.evaluations(), before);
    }

    #[test]
    fn single_sample_is_best_quality() {
        let (spec, archive) = run();
        let req = SamplingRequest::balanced(1);
        let set = sample(&archive, &req, &spec).unwrap();
        let best = set.entries[0].quality;
        let all = score(&spec, &archive, &req).unwrap();
        assert!(all.quality.iter().all(|q| *q <= best));
    }

    #[test]
    fn channel_targets_need_direction() {
        let (spec, archive) = run();
        let mut req = SamplingRequest::balanced(3);
        req.targets.push(Target::new("Y2", 0.9, 1.0, 1.0));
        assert!(matches!(sample(&archive, &req, &spec), Err(SampleError::InvalidRequest(_))));
        req.targets[0].direction = Some(Direction::Maximize);
        let set = sample(&archive, &req, &spec).unwrap();
        assert!(set.entries.iter().all(|c| c.dtai.is_some() && c.ratios.len() == 1));
        req.targets[0].objective = "nope".into();
        assert_eq!(
            sample(&archive, &req, &spec).unwrap_err(),
            SampleError::UnknownObjective("nope".into())
        );
    }

    #[test]
    fn wrong_problem_and_empty_archive() {
        let (spec, archive) = run();
        let other = bench2d::problem(bench2d::default_dataset(), bench2d::query("D1").unwrap()).unwrap();
        assert!(matches!(
            sample(&archive, &SamplingRequest::balanced(1), &other),
            Err(SampleError::Archive(ArchiveError::HashMismatch { .. }))
        ));
        let mut empty = archive.clone();
        empty.truncate(0);
        assert_eq!(
            sample(&empty, &SamplingRequest::balanced(1), &spec).unwrap_err(),
            SampleError::NoValidCounterfactuals
        );
    }
}
