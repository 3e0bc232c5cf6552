//! Counterfactual quality objectives (proximity, sparsity, manifold proximity)
//! and user-defined auxiliary objectives over predictor channels.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::design_space::{Dataset, DesignPoint, Value};
use crate::scalar::Scalar;

/// Relative tolerance below which a continuous feature counts as unchanged.
pub const CHANGE_TOLERANCE: f64 = 1e-9;
/// Floor applied to a feature range before scaling the change tolerance.
pub const RANGE_FLOOR: f64 = 1e-12;
/// Neighbors used for manifold proximity unless configured otherwise.
pub const DEFAULT_KNN: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("points do not share a schema: {0}")]
    SchemaMismatch(String),
    #[error("k = {k} exceeds the {rows} dataset rows")]
    NotEnoughRows { k: usize, rows: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("objective `{objective}` references unknown channel `{channel}`")]
    UnresolvedChannel { objective: String, channel: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValues<S> {
    pub proximity: S,
    pub sparsity: S,
    pub manifold: S,
    /// Auxiliary objectives in declaration order, stored in minimization form.
    pub auxiliary: Vec<S>,
}

impl<S: Scalar> ObjectiveValues<S> {
    /// `[f_pr, f_sp, f_mp, f_1 .. f_M]`, all minimized.
    pub fn to_vec(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(3 + self.auxiliary.len());
        v.extend([self.proximity, self.sparsity, self.manifold]);
        v.extend_from_slice(&self.auxiliary);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

/// How an auxiliary objective's raw value is obtained from predictor channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveExpr {
    Channel(String),
    /// `offset + Σ coefficient · channel`
    Linear {
        terms: BTreeMap<String, f64>,
        #[serde(default)]
        offset: f64,
    },
}

impl ObjectiveExpr {
    pub fn channels(&self) -> Vec<&str> {
        match self {
            ObjectiveExpr::Channel(c) => vec![c.as_str()],
            ObjectiveExpr::Linear { terms, .. } => terms.keys().map(String::as_str).collect(),
        }
    }

    fn eval<S: Scalar>(&self, outputs: &impl ChannelLookup<S>) -> Result<S, String> {
        let get = |c: &str| outputs.channel(c).ok_or_else(|| c.to_string());
        match self {
            ObjectiveExpr::Channel(c) => get(c),
            ObjectiveExpr::Linear { terms, offset } => {
                let mut acc = S::lit(*offset);
                for (c, coef) in terms {
                    acc += S::lit(*coef) * get(c)?;
                }
                Ok(acc)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxiliaryObjectiveSpec {
    pub name: String,
    pub direction: Direction,
    pub evaluator: ObjectiveExpr,
}

impl AuxiliaryObjectiveSpec {
    pub fn channel(name: impl Into<String>, channel: impl Into<String>, direction: Direction) -> Self {
        AuxiliaryObjectiveSpec {
            name: name.into(),
            direction,
            evaluator: ObjectiveExpr::Channel(channel.into()),
        }
    }

    /// Raw value in the objective's own direction.
    pub fn raw_value<S: Scalar>(&self, outputs: &impl ChannelLookup<S>) -> Result<S, ObjectiveError> {
        self.evaluator
            .eval(outputs)
            .map_err(|channel| ObjectiveError::UnresolvedChannel {
                objective: self.name.clone(),
                channel,
            })
    }

    /// Value in minimization form: maximized objectives are negated.
    pub fn minimized_value<S: Scalar>(
        &self,
        outputs: &impl ChannelLookup<S>,
    ) -> Result<S, ObjectiveError> {
        let raw = self.raw_value(outputs)?;
        Ok(self.to_minimized(raw))
    }

    pub fn to_minimized<S: Scalar>(&self, raw: S) -> S {
        match self.direction {
            Direction::Minimize => raw,
            Direction::Maximize => -raw,
        }
    }

    pub fn from_minimized<S: Scalar>(&self, stored: S) -> S {
        self.to_minimized(stored)
    }
}

/// Name-based access to predictor outputs.
pub trait ChannelLookup<S> {
    fn channel(&self, name: &str) -> Option<S>;
}

impl<S: Scalar> ChannelLookup<S> for HashMap<String, S> {
    fn channel(&self, name: &str) -> Option<S> {
        self.get(name).copied()
    }
}

impl<S: Scalar> ChannelLookup<S> for BTreeMap<String, S> {
    fn channel(&self, name: &str) -> Option<S> {
        self.get(name).copied()
    }
}

/// Parallel name/value slices.
pub struct NamedChannels<'a, S> {
    pub names: &'a [String],
    pub values: &'a [S],
}

impl<S: Scalar> ChannelLookup<S> for NamedChannels<'_, S> {
    fn channel(&self, name: &str) -> Option<S> {
        self.names
            .iter()
            .position(|n| n == name)
            .and_then(|i| self.values.get(i).copied())
    }
}

fn check_pair<S: Scalar>(
    p: &DesignPoint<S>,
    q: &DesignPoint<S>,
    ranges: &[S],
) -> Result<(), ObjectiveError> {
    if p.len() != q.len() || p.len() != ranges.len() {
        return Err(ObjectiveError::SchemaMismatch(format!(
            "lengths {} / {} / {} ranges",
            p.len(),
            q.len(),
            ranges.len()
        )));
    }
    for (i, (a, b)) in p.values().iter().zip(q.values()).enumerate() {
        if matches!(a, Value::Real(_)) != matches!(b, Value::Real(_)) {
            return Err(ObjectiveError::SchemaMismatch(format!(
                "feature {i} has different kinds"
            )));
        }
    }
    Ok(())
}

/// Per-feature Gower term. A zero range yields 0 for equal values and 1 otherwise.
#[inline]
pub fn gower_term<S: Scalar>(a: Value<S>, b: Value<S>, range: S) -> S {
    match (a, b) {
        (Value::Real(x), Value::Real(y)) => {
            if range > S::zero() {
                (x - y).abs() / range
            } else if x == y {
                S::zero()
            } else {
                S::one()
            }
        }
        (Value::Category(x), Value::Category(y)) => {
            if x == y {
                S::zero()
            } else {
                S::one()
            }
        }
        _ => S::one(),
    }
}

/// Gower distance without the schema check; callers guarantee matching shapes.
#[inline]
pub(crate) fn gower_unchecked<S: Scalar>(p: &[Value<S>], q: &[Value<S>], ranges: &[S]) -> S {
    let mut acc = S::zero();
    for ((a, b), r) in p.iter().zip(q).zip(ranges) {
        acc += gower_term(*a, *b, *r);
    }
    acc / S::lit(p.len() as f64)
}

/// Mean of per-feature Gower terms between `p` and `q`.
pub fn gower_distance<S: Scalar>(
    p: &DesignPoint<S>,
    q: &DesignPoint<S>,
    ranges: &[S],
) -> Result<S, ObjectiveError> {
    check_pair(p, q, ranges)?;
    Ok(gower_unchecked(p.values(), q.values(), ranges))
}

#[inline]
pub(crate) fn is_changed<S: Scalar>(a: Value<S>, b: Value<S>, range: S, tolerance: S) -> bool {
    match (a, b) {
        (Value::Real(x), Value::Real(y)) => {
            (x - y).abs() > tolerance * range.max(S::lit(RANGE_FLOOR))
        }
        (Value::Category(x), Value::Category(y)) => x != y,
        _ => true,
    }
}

/// Number of features where `p` differs from `q` under the change tolerance.
pub fn changed_feature_count<S: Scalar>(
    p: &DesignPoint<S>,
    q: &DesignPoint<S>,
    ranges: &[S],
    tolerance: S,
) -> Result<usize, ObjectiveError> {
    check_pair(p, q, ranges)?;
    Ok(p.values()
        .iter()
        .zip(q.values())
        .zip(ranges)
        .filter(|((a, b), r)| is_changed(**a, **b, **r, tolerance))
        .count())
}

/// Fraction of all `d` features changed from the query.
pub fn changed_feature_ratio<S: Scalar>(
    p: &DesignPoint<S>,
    q: &DesignPoint<S>,
    ranges: &[S],
    tolerance: S,
) -> Result<S, ObjectiveError> {
    let n = changed_feature_count(p, q, ranges, tolerance)?;
    Ok(S::lit(n as f64) / S::lit(p.len() as f64))
}

/// Mean Gower distance from `p` to its `k` nearest dataset rows. Ties between
/// equidistant rows go to the lower row index.
pub fn avg_gower_to_knn<S: Scalar>(
    p: &DesignPoint<S>,
    dataset: &Dataset<S>,
    k: usize,
) -> Result<S, ObjectiveError> {
    if k == 0 {
        return Err(ObjectiveError::ZeroK);
    }
    if k > dataset.len() {
        return Err(ObjectiveError::NotEnoughRows {
            k,
            rows: dataset.len(),
        });
    }
    let ranges = dataset.ranges();
    check_pair(p, &dataset.rows()[0], ranges)?;
    Ok(knn_unchecked(p, dataset, k))
}

pub(crate) fn knn_unchecked<S: Scalar>(p: &DesignPoint<S>, dataset: &Dataset<S>, k: usize) -> S {
    let ranges = dataset.ranges();
    let mut dist: Vec<(S, usize)> = dataset
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| (gower_unchecked(p.values(), row.values(), ranges), i))
        .collect();
    let order = |a: &(S, usize), b: &(S, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, order);
        dist.truncate(k);
    }
    dist.sort_by(order);
    dist.iter().map(|(d, _)| *d).sum::<S>() / S::lit(k as f64)
}

/// Fills all objective values for candidate `p` against query `q`.
pub fn evaluate_objectives<S: Scalar>(
    p: &DesignPoint<S>,
    q: &DesignPoint<S>,
    dataset: &Dataset<S>,
    k: usize,
    aux_specs: &[AuxiliaryObjectiveSpec],
    outputs: &impl ChannelLookup<S>,
) -> Result<ObjectiveValues<S>, ObjectiveError> {
    let ranges = dataset.ranges();
    let auxiliary = aux_specs
        .iter()
        .map(|spec| spec.minimized_value(outputs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ObjectiveValues {
        proximity: gower_distance(p, q, ranges)?,
        sparsity: changed_feature_ratio(p, q, ranges, S::lit(CHANGE_TOLERANCE))?,
        manifold: avg_gower_to_knn(p, dataset, k)?,
        auxiliary,
    })
}
