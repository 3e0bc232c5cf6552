//! Grids of single-best samples under scheduled weight overrides.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::optimizer::CandidateArchive;
use crate::problem::ProblemSpec;
use crate::scalar::Scalar;

use super::{sample, Counterfactual, SampleError, SamplingRequest};

/// Expressions over `i`, `j` (1-based row and column), `m` (rows) and `n`
/// (columns). `w` sets `w_pr`, `w_sp` and `w_mp` together; the specific
/// weights override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_pr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_sp: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_mp: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_d: Option<String>,
    /// Per-target priority, keyed by the target's objective name.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub alpha: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub beta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub row: Overrides,
    #[serde(default)]
    pub col: Overrides,
}

impl SweepSpec {
    /// Rows halve the quality weights from 0.1 (`w = 0.2/2^i`); columns shift
    /// priority between two targets (`α₁ = 1.5^(n−j)`, `α₂ = 1.5^(j−1)`).
    pub fn weight_by_priority(rows: usize, cols: usize, first: &str, second: &str) -> Self {
        SweepSpec {
            rows,
            cols,
            row: Overrides {
                w: Some("0.2/2^i".into()),
                ..Overrides::default()
            },
            col: Overrides {
                alpha: BTreeMap::from([
                    (first.to_string(), "1.5^(n-j)".into()),
                    (second.to_string(), "1.5^(j-1)".into()),
                ]),
                ..Overrides::default()
            },
        }
    }
}

/// Evaluates `expr` with `i`, `j`, `m`, `n` bound.
pub fn eval_schedule(expr: &str, i: usize, j: usize, m: usize, n: usize) -> Result<f64, SampleError> {
    let mut vars: BTreeMap<String, f64> = [("i", i), ("j", j), ("m", m), ("n", n)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v as f64))
        .collect();
    let err = |message: String| SampleError::Expression {
        expr: expr.into(),
        message,
    };
    let v = fasteval::ez_eval(expr, &mut vars).map_err(|e| err(format!("{e:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(err(format!("evaluates to {v}")))
    }
}

impl Overrides {
    fn apply(&self, req: &mut SamplingRequest, at: (usize, usize, usize, usize)) -> Result<(), SampleError> {
        let (i, j, m, n) = at;
        let ev = |e: &String| eval_schedule(e, i, j, m, n);
        if let Some(e) = &self.w {
            let w = ev(e)?;
            req.w_pr = w;
            req.w_sp = w;
            req.w_mp = w;
        }
        for (slot, e) in [
            (&mut req.w_pr, &self.w_pr),
            (&mut req.w_sp, &self.w_sp),
            (&mut req.w_mp, &self.w_mp),
            (&mut req.w_d, &self.w_d),
        ] {
            if let Some(e) = e {
                *slot = ev(e)?;
            }
        }
        for (map, is_alpha) in [(&self.alpha, true), (&self.beta, false)] {
            for (objective, e) in map {
                let value = ev(e)?;
                let target = req
                    .targets
                    .iter_mut()
                    .find(|t| &t.objective == objective)
                    .ok_or_else(|| {
                        SampleError::InvalidRequest(format!("schedule overrides `{objective}`, which has no target"))
                    })?;
                if is_alpha {
                    target.alpha = value;
                } else {
                    target.beta = value;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell<S> {
    /// 1-based.
    pub row: usize,
    /// 1-based.
    pub col: usize,
    pub request: SamplingRequest,
    pub best: Counterfactual<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid<S> {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub cells: Vec<SweepCell<S>>,
}

/// The single best counterfactual for every cell of the schedule grid.
pub fn sweep<S: Scalar>(
    archive: &CandidateArchive<S>,
    spec: &ProblemSpec<S>,
    schedule: &SweepSpec,
    base: &SamplingRequest,
) -> Result<SweepGrid<S>, SampleError> {
    if schedule.rows == 0 || schedule.cols == 0 {
        return Err(SampleError::InvalidRequest("sweep needs at least one row and one column".into()));
    }
    let (m, n) = (schedule.rows, schedule.cols);
    let mut cells = Vec::with_capacity(m * n);
    for i in 1..=m {
        for j in 1..=n {
            let mut req = base.clone();
            req.count = 1;
            schedule.row.apply(&mut req, (i, j, m, n))?;
            schedule.col.apply(&mut req, (i, j, m, n))?;
            let set = sample(archive, &req, spec)?;
            let best = set.entries.into_iter().next().ok_or(SampleError::NoValidCounterfactuals)?;
            cells.push(SweepCell {
                row: i,
                col: j,
                request: req,
                best,
            });
        }
    }
    Ok(SweepGrid { rows: m, cols: n, cells })
}
