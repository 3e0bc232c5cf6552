//! The full counterfactual search problem: query, dataset, predictors, hard
//! output and domain constraints, and auxiliary objectives.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design_space::{Dataset, DesignPoint, DesignSchema};
use crate::objectives::{
    changed_feature_ratio, gower_unchecked, knn_unchecked, AuxiliaryObjectiveSpec,
    NamedChannels, ObjectiveValues, CHANGE_TOLERANCE, DEFAULT_KNN,
};
use crate::predictors::{Outputs, Predictor, PredictorError, PredictorSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("invalid query: {0}")]
    Query(String),
    #[error("constraint on `{0}` references a channel no predictor produces")]
    UnknownChannel(String),
    #[error("output constraint on `{channel}`: {reason}")]
    BadConstraint { channel: String, reason: String },
    #[error("objective `{0}` cannot be resolved against the registered predictors")]
    UnresolvedObjective(String),
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("knn must be between 1 and the dataset size ({rows}), got {k}")]
    BadKnn { k: usize, rows: usize },
    #[error("missing output channel `{0}`")]
    MissingChannel(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// `lower ≤ channel ≤ upper`; an absent bound is infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConstraint {
    pub channel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl OutputConstraint {
    pub fn between(channel: impl Into<String>, lower: f64, upper: f64) -> Self {
        OutputConstraint {
            channel: channel.into(),
            lower: Some(lower),
            upper: Some(upper),
        }
    }

    pub fn at_least(channel: impl Into<String>, lower: f64) -> Self {
        OutputConstraint {
            channel: channel.into(),
            lower: Some(lower),
            upper: None,
        }
    }

    pub fn at_most(channel: impl Into<String>, upper: f64) -> Self {
        OutputConstraint {
            channel: channel.into(),
            lower: None,
            upper: Some(upper),
        }
    }

    fn check(&self) -> Result<(), ProblemError> {
        let bad = |reason: &str| ProblemError::BadConstraint {
            channel: self.channel.clone(),
            reason: reason.into(),
        };
        match (self.lower, self.upper) {
            (None, None) => Err(bad("needs at least one finite bound")),
            (Some(l), _) if !l.is_finite() => Err(bad("lower bound must be finite when given")),
            (_, Some(u)) if !u.is_finite() => Err(bad("upper bound must be finite when given")),
            (Some(l), Some(u)) if l > u => Err(bad("lower bound exceeds upper bound")),
            _ => Ok(()),
        }
    }

    /// Normalized violation of this constraint alone.
    pub fn violation<S: Scalar>(&self, value: S) -> S {
        let zero = S::zero();
        let below = self.lower.map_or(zero, |l| (S::lit(l) - value).max(zero));
        let above = self.upper.map_or(zero, |u| (value - S::lit(u)).max(zero));
        let width = match (self.lower, self.upper) {
            (Some(l), Some(u)) if u > l => S::lit(u - l),
            _ => S::one(),
        };
        (below + above) / width
    }
}

pub type ConstraintFn<S> = Arc<dyn Fn(&DesignPoint<S>) -> S + Send + Sync>;

/// A domain constraint `g(p) ≥ 0`, either read from a predictor channel or
/// computed by an in-process function.
#[derive(Clone)]
pub enum DomainConstraint<S> {
    Channel { name: String, channel: String },
    Function { name: String, f: ConstraintFn<S> },
}

impl<S> DomainConstraint<S> {
    pub fn name(&self) -> &str {
        match self {
            DomainConstraint::Channel { name, .. } | DomainConstraint::Function { name, .. } => name,
        }
    }
}

impl<S> fmt::Debug for DomainConstraint<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainConstraint::Channel { name, channel } => {
                write!(f, "DomainConstraint::Channel({name} <- {channel})")
            }
            DomainConstraint::Function { name, .. } => write!(f, "DomainConstraint::Function({name})"),
        }
    }
}

/// Everything the optimizer caches per evaluated design.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<S> {
    pub objectives: ObjectiveValues<S>,
    pub violation: S,
    pub channels: Vec<S>,
}

pub struct ProblemSpec<S: Scalar> {
    dataset: Arc<Dataset<S>>,
    query: DesignPoint<S>,
    predictors: Arc<PredictorSet<S>>,
    output_constraints: Vec<OutputConstraint>,
    domain_constraints: Vec<DomainConstraint<S>>,
    aux_objectives: Vec<AuxiliaryObjectiveSpec>,
    knn: usize,
    hash: String,
}

impl<S: Scalar> fmt::Debug for ProblemSpec<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("hash", &self.hash)
            .field("query", &self.query)
            .field("channels", &self.predictors.channels())
            .field("output_constraints", &self.output_constraints)
            .field("domain_constraints", &self.domain_constraints)
            .field("aux_objectives", &self.aux_objectives)
            .field("knn", &self.knn)
            .finish()
    }
}

pub struct ProblemBuilder<S: Scalar> {
    dataset: Arc<Dataset<S>>,
    query: DesignPoint<S>,
    predictors: Vec<Box<dyn Predictor<S>>>,
    output_constraints: Vec<OutputConstraint>,
    domain_constraints: Vec<DomainConstraint<S>>,
    aux_objectives: Vec<AuxiliaryObjectiveSpec>,
    knn: usize,
}

impl<S: Scalar> ProblemBuilder<S> {
    pub fn predictor(mut self, p: Box<dyn Predictor<S>>) -> Self {
        self.predictors.push(p);
        self
    }

    pub fn output_constraint(mut self, c: OutputConstraint) -> Self {
        self.output_constraints.push(c);
        self
    }

    pub fn domain_constraint(mut self, c: DomainConstraint<S>) -> Self {
        self.domain_constraints.push(c);
        self
    }

    pub fn objective(mut self, o: AuxiliaryObjectiveSpec) -> Self {
        self.aux_objectives.push(o);
        self
    }

    pub fn knn(mut self, k: usize) -> Self {
        self.knn = k;
        self
    }

    pub fn build(self) -> Result<ProblemSpec<S>, ProblemError> {
        let schema = self.dataset.schema();
        schema
            .validate_point(&self.query)
            .map_err(|e| ProblemError::Query(e.to_string()))?;
        if self.knn == 0 || self.knn > self.dataset.len() {
            return Err(ProblemError::BadKnn {
                k: self.knn,
                rows: self.dataset.len(),
            });
        }
        let predictors = PredictorSet::new(self.predictors)?;
        let channels = predictors.channels();
        for c in &self.output_constraints {
            c.check()?;
            if !channels.contains(&c.channel) {
                return Err(ProblemError::UnknownChannel(c.channel.clone()));
            }
        }
        let mut names = HashSet::new();
        for c in &self.domain_constraints {
            if !names.insert(c.name().to_string()) {
                return Err(ProblemError::DuplicateName(c.name().into()));
            }
            if let DomainConstraint::Channel { channel, .. } = c {
                if !channels.contains(channel) {
                    return Err(ProblemError::UnknownChannel(channel.clone()));
                }
            }
        }
        let mut names = HashSet::new();
        for o in &self.aux_objectives {
            if !names.insert(o.name.clone()) {
                return Err(ProblemError::DuplicateName(o.name.clone()));
            }
            if o.evaluator.channels().iter().any(|c| !channels.iter().any(|k| k == c)) {
                return Err(ProblemError::UnresolvedObjective(o.name.clone()));
            }
        }
        let mut spec = ProblemSpec {
            dataset: self.dataset,
            query: self.query,
            predictors: Arc::new(predictors),
            output_constraints: self.output_constraints,
            domain_constraints: self.domain_constraints,
            aux_objectives: self.aux_objectives,
            knn: self.knn,
            hash: String::new(),
        };
        spec.hash = spec.compute_hash();
        Ok(spec)
    }
}

#[derive(Serialize)]
struct Descriptor<'a, S: Scalar> {
    scalar: &'static str,
    schema: &'a DesignSchema<S>,
    dataset_digest: String,
    query: Vec<serde_json::Value>,
    predictors: Vec<crate::predictors::PredictorSpec>,
    output_constraints: &'a [OutputConstraint],
    domain_constraints: Vec<String>,
    aux_objectives: &'a [AuxiliaryObjectiveSpec],
    knn: usize,
}

impl<S: Scalar> ProblemSpec<S> {
    pub fn builder(dataset: impl Into<Arc<Dataset<S>>>, query: DesignPoint<S>) -> ProblemBuilder<S> {
        ProblemBuilder {
            dataset: dataset.into(),
            query,
            predictors: Vec::new(),
            output_constraints: Vec::new(),
            domain_constraints: Vec::new(),
            aux_objectives: Vec::new(),
            knn: DEFAULT_KNN,
        }
    }

    fn compute_hash(&self) -> String {
        let mut rows = Sha256::new();
        for row in self.dataset.rows() {
            for v in row.values() {
                let bits = match v {
                    crate::design_space::Value::Real(x) => x.key_bits(),
                    crate::design_space::Value::Category(c) => u64::from(*c) | (1 << 63),
                };
                rows.update(bits.to_le_bytes());
            }
        }
        let descriptor = Descriptor {
            scalar: S::NAME,
            schema: self.schema(),
            dataset_digest: hex::encode(rows.finalize()),
            query: self.schema().point_to_json(&self.query),
            predictors: self.predictors.specs(),
            output_constraints: &self.output_constraints,
            domain_constraints: self
                .domain_constraints
                .iter()
                .map(|c| match c {
                    DomainConstraint::Channel { name, channel } => format!("{name}:channel:{channel}"),
                    DomainConstraint::Function { name, .. } => format!("{name}:function"),
                })
                .collect(),
            aux_objectives: &self.aux_objectives,
            knn: self.knn,
        };
        let text = serde_json::to_string(&descriptor).expect("descriptor serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Content hash identifying this problem; archives carry it.
    pub fn problem_hash(&self) -> &str {
        &self.hash
    }

    pub fn schema(&self) -> &DesignSchema<S> {
        self.dataset.schema()
    }

    pub fn dataset(&self) -> &Dataset<S> {
        &self.dataset
    }

    pub fn query(&self) -> &DesignPoint<S> {
        &self.query
    }

    pub fn predictors(&self) -> &PredictorSet<S> {
        &self.predictors
    }

    pub fn channels(&self) -> &[String] {
        self.predictors.channels()
    }

    pub fn output_constraints(&self) -> &[OutputConstraint] {
        &self.output_constraints
    }

    pub fn domain_constraints(&self) -> &[DomainConstraint<S>] {
        &self.domain_constraints
    }

    pub fn aux_objectives(&self) -> &[AuxiliaryObjectiveSpec] {
        &self.aux_objectives
    }

    pub fn knn(&self) -> usize {
        self.knn
    }

    /// Objective arity seen by the optimizer: three quality objectives plus auxiliaries.
    pub fn objective_count(&self) -> usize {
        3 + self.aux_objectives.len()
    }

    fn lookup<'a>(&'a self, values: &'a [S]) -> NamedChannels<'a, S> {
        NamedChannels {
            names: self.channels(),
            values,
        }
    }

    /// Normalized sum of output-bound violations plus domain-constraint violations.
    /// Zero exactly when every constraint holds. Failed predictions are infinitely
    /// infeasible.
    pub fn constraint_violation(&self, p: &DesignPoint<S>, outputs: &Outputs<S>) -> Result<S, ProblemError> {
        if outputs.failed {
            return Ok(S::infinity());
        }
        use crate::objectives::ChannelLookup;
        let lookup = self.lookup(&outputs.values);
        let mut total = S::zero();
        for c in &self.output_constraints {
            let v = lookup
                .channel(&c.channel)
                .ok_or_else(|| ProblemError::MissingChannel(c.channel.clone()))?;
            total += c.violation(v);
        }
        for g in &self.domain_constraints {
            let value = match g {
                DomainConstraint::Channel { channel, .. } => lookup
                    .channel(channel)
                    .ok_or_else(|| ProblemError::MissingChannel(channel.clone()))?,
                DomainConstraint::Function { f, .. } => f(p),
            };
            if !value.is_finite() {
                return Ok(S::infinity());
            }
            total += (-value).max(S::zero());
        }
        Ok(total)
    }

    /// Feasible and not the unmodified query.
    pub fn is_valid_counterfactual(&self, p: &DesignPoint<S>, outputs: &Outputs<S>) -> bool {
        matches!(self.constraint_violation(p, outputs), Ok(v) if v == S::zero()) && *p != self.query
    }

    /// Objectives from cached channel outputs; no predictor calls.
    pub fn objectives(&self, p: &DesignPoint<S>, outputs: &Outputs<S>) -> Result<ObjectiveValues<S>, ProblemError> {
        let ranges = self.dataset.ranges();
        let auxiliary = if outputs.failed {
            vec![S::max_value(); self.aux_objectives.len()]
        } else {
            let lookup = self.lookup(&outputs.values);
            self.aux_objectives
                .iter()
                .map(|o| {
                    o.minimized_value(&lookup)
                        .map_err(|_| ProblemError::UnresolvedObjective(o.name.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(ObjectiveValues {
            proximity: gower_unchecked(p.values(), self.query.values(), ranges),
            sparsity: changed_feature_ratio(p, &self.query, ranges, S::lit(CHANGE_TOLERANCE))
                .map_err(|e| ProblemError::Query(e.to_string()))?,
            manifold: knn_unchecked(p, &self.dataset, self.knn),
            auxiliary,
        })
    }

    /// Predicts and scores a batch. Predictor calls run in order; objective
    /// computation is spread across threads and merged by index.
    pub fn evaluate_batch(&self, designs: &[DesignPoint<S>]) -> Result<Vec<Evaluation<S>>, ProblemError> {
        let outputs = self.predictors.evaluate(self.schema(), designs)?;
        designs
            .par_iter()
            .zip(outputs.par_iter())
            .map(|(p, o)| {
                Ok(Evaluation {
                    objectives: self.objectives(p, o)?,
                    violation: self.constraint_violation(p, o)?,
                    channels: o.values.clone(),
                })
            })
            .collect()
    }

    /// Total predictor evaluations so far.
    pub fn evaluations(&self) -> u64 {
        self.predictors.evaluations()
    }
}
