//! Synthetic two-feature benchmark whose constraints are satisfiable only in
//! four small disjoint regions, plus a grid flood-fill oracle for them.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConstraintsConfig, DatasetSource, ObjectivesConfig, ProblemConfig, ScalarKind};
use crate::design_space::{Dataset, DesignPoint, DesignSchema, FeatureSpec};
use crate::predictors::{build_predictor, Backend, PredictorSpec};
use crate::problem::{OutputConstraint, ProblemError, ProblemSpec};
use crate::optimizer::OptimizerConfig;
use crate::sampler::SamplingRequest;
use crate::scalar::Scalar;

pub const DATASET_SEED: u64 = 42;
pub const DATASET_SIZE: usize = 1000;
pub const Y1_LOWER: f64 = 0.4;
pub const Y1_UPPER: f64 = 0.6;
pub const Y2_LOWER: f64 = 0.6;

const SIGMA: f64 = 0.2;
const CENTERS: [(f64, f64); 2] = [(0.5, 0.3), (0.5, 0.7)];

/// Named queries, all infeasible.
pub const QUERIES: [(&str, [f64; 2]); 3] = [("D1", [0.2, 0.3]), ("D2", [0.8, 0.5]), ("D3", [0.5, 0.9])];

/// Sinusoidal bands in x1.
pub fn y1<S: Scalar>(x1: S, _x2: S) -> S {
    let three_pi = S::lit(3.0) * S::PI();
    ((three_pi * x1).sin() + S::one()) / S::lit(2.0)
}

/// Two Gaussian bumps stacked in x2.
pub fn y2<S: Scalar>(x1: S, x2: S) -> S {
    let denom = S::lit(2.0 * SIGMA * SIGMA);
    CENTERS
        .iter()
        .map(|&(b1, b2)| {
            let d1 = x1 - S::lit(b1);
            let d2 = x2 - S::lit(b2);
            (-(d1 * d1 + d2 * d2) / denom).exp()
        })
        .fold(S::neg_infinity(), S::max)
}

/// Closed bounds on Y1 and a lower bound on Y2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub y1: (f64, f64),
    pub y2_lower: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            y1: (Y1_LOWER, Y1_UPPER),
            y2_lower: Y2_LOWER,
        }
    }
}

impl Thresholds {
    pub fn feasible(&self, x1: f64, x2: f64) -> bool {
        let a = y1(x1, x2);
        let b = y2(x1, x2);
        self.y1.0 <= a && a <= self.y1.1 && b >= self.y2_lower
    }
}

/// Ground-truth feasibility of a design under the default thresholds.
pub fn is_feasible(x1: f64, x2: f64) -> bool {
    Thresholds::default().feasible(x1, x2)
}

pub fn schema<S: Scalar>() -> DesignSchema<S> {
    DesignSchema::new(vec![
        FeatureSpec::continuous("x1", S::zero(), S::one()),
        FeatureSpec::continuous("x2", S::zero(), S::one()),
    ])
    .expect("static schema is valid")
}

/// `n` uniform points drawn from a ChaCha8 stream.
pub fn dataset<S: Scalar>(seed: u64, n: usize) -> Dataset<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            DesignPoint::reals(&[S::lit(a), S::lit(b)])
        })
        .collect();
    Dataset::new(schema::<S>(), rows).expect("generated rows lie in bounds")
}

pub fn default_dataset<S: Scalar>() -> Dataset<S> {
    dataset(DATASET_SEED, DATASET_SIZE)
}

pub fn query<S: Scalar>(name: &str) -> Option<DesignPoint<S>> {
    QUERIES
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, [a, b])| DesignPoint::reals(&[S::lit(*a), S::lit(*b)]))
}

pub fn predictor_spec() -> PredictorSpec {
    PredictorSpec {
        name: "bench2d".into(),
        channels: vec!["Y1".into(), "Y2".into()],
        backend: Backend::Builtin("bench2d".into()),
    }
}

pub fn output_constraints() -> Vec<OutputConstraint> {
    vec![
        OutputConstraint::between("Y1", Y1_LOWER, Y1_UPPER),
        OutputConstraint::at_least("Y2", Y2_LOWER),
    ]
}

/// The benchmark problem for `query` using the builtin analytic predictor.
pub fn problem<S: Scalar>(dataset: Dataset<S>, query: DesignPoint<S>) -> Result<ProblemSpec<S>, ProblemError> {
    let mut builder = ProblemSpec::builder(dataset, query).predictor(build_predictor(&predictor_spec())?);
    for c in output_constraints() {
        builder = builder.output_constraint(c);
    }
    builder.build()
}

/// Canonical configuration document for the benchmark and `query`.
pub fn config(query: &str) -> Option<ProblemConfig> {
    let (name, _) = QUERIES.iter().find(|(n, _)| n.eq_ignore_ascii_case(query))?;
    let q: DesignPoint<f64> = self::query(name)?;
    let schema = schema::<f64>();
    Some(ProblemConfig {
        scalar: ScalarKind::F64,
        schema: serde_json::to_value(&schema).expect("schema serializes"),
        dataset: DatasetSource::Bench2d {
            seed: DATASET_SEED,
            size: DATASET_SIZE,
        },
        query: serde_json::Value::Array(schema.point_to_json(&q)),
        predictors: vec![predictor_spec()],
        constraints: ConstraintsConfig {
            outputs: output_constraints(),
            domain: Vec::new(),
        },
        objectives: ObjectivesConfig::default(),
        optimizer: OptimizerConfig {
            seed: DATASET_SEED,
            ..OptimizerConfig::default()
        },
        sampling: Some(SamplingRequest::balanced(10)),
    })
}

/// Axis-aligned box in grid cells, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellBox {
    pub min_i: usize,
    pub max_i: usize,
    pub min_j: usize,
    pub max_j: usize,
}

/// Labeled feasibility grid. Cell `(i, j)` is sampled at its center
/// `((i + 0.5)/res, (j + 0.5)/res)`; `i` indexes x1.
#[derive(Debug, Clone)]
pub struct FeasibleComponents {
    pub resolution: usize,
    /// Component label per cell, row-major in `j`; 0 means infeasible.
    pub labels: Vec<u32>,
    pub boxes: Vec<CellBox>,
}

impl FeasibleComponents {
    pub fn count(&self) -> usize {
        self.boxes.len()
    }

    pub fn label(&self, i: usize, j: usize) -> u32 {
        self.labels[j * self.resolution + i]
    }

    fn cell_of(&self, x: f64) -> usize {
        ((x * self.resolution as f64).floor().max(0.0) as usize).min(self.resolution - 1)
    }

    /// Component containing `(x1, x2)`, searching up to `radius` cells around it
    /// for a labeled one when the containing cell's center falls just outside.
    pub fn component_at(&self, x1: f64, x2: f64, radius: usize) -> Option<u32> {
        let (ci, cj) = (self.cell_of(x1), self.cell_of(x2));
        let res = self.resolution as isize;
        let mut best: Option<(f64, u32)> = None;
        let r = radius as isize;
        for dj in -r..=r {
            for di in -r..=r {
                let (i, j) = (ci as isize + di, cj as isize + dj);
                if i < 0 || j < 0 || i >= res || j >= res {
                    continue;
                }
                let l = self.label(i as usize, j as usize);
                if l == 0 {
                    continue;
                }
                let cx = (i as f64 + 0.5) / self.resolution as f64;
                let cy = (j as f64 + 0.5) / self.resolution as f64;
                let d = (cx - x1).powi(2) + (cy - x2).powi(2);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, l));
                }
            }
        }
        best.map(|(_, l)| l)
    }

    /// Binary portable graymap, feasible cells white, with x2 increasing upward.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.resolution;
        write!(out, "P5\n{n} {n}\n255\n")?;
        let mut row = vec![0u8; n];
        for j in (0..n).rev() {
            for (i, px) in row.iter_mut().enumerate() {
                *px = if self.label(i, j) > 0 { 255 } else { 0 };
            }
            out.write_all(&row)?;
        }
        Ok(())
    }
}

/// Flood-fills (4-connectivity) the grid of feasible cell centers.
pub fn feasible_components(resolution: usize, thresholds: Thresholds) -> FeasibleComponents {
    let n = resolution;
    let step = 1.0 / n as f64;
    let feasible: Vec<bool> = (0..n * n)
        .map(|k| {
            let (i, j) = (k % n, k / n);
            thresholds.feasible((i as f64 + 0.5) * step, (j as f64 + 0.5) * step)
        })
        .collect();
    let mut labels = vec![0u32; n * n];
    let mut boxes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n * n {
        if !feasible[start] || labels[start] != 0 {
            continue;
        }
        let label = boxes.len() as u32 + 1;
        let mut bb = CellBox {
            min_i: start % n,
            max_i: start % n,
            min_j: start / n,
            max_j: start / n,
        };
        labels[start] = label;
        queue.push_back(start);
        while let Some(k) = queue.pop_front() {
            let (i, j) = (k % n, k / n);
            bb.min_i = bb.min_i.min(i);
            bb.max_i = bb.max_i.max(i);
            bb.min_j = bb.min_j.min(j);
            bb.max_j = bb.max_j.max(j);
            let mut visit = |m: usize| {
                if feasible[m] && labels[m] == 0 {
                    labels[m] = label;
                    queue.push_back(m);
                }
            };
            if i > 0 {
                visit(k - 1);
            }
            if i + 1 < n {
                visit(k + 1);
            }
            if j > 0 {
                visit(k - n);
            }
            if j + 1 < n {
                visit(k + n);
            }
        }
        boxes.push(bb);
    }
    FeasibleComponents {
        resolution,
        labels,
        boxes,
    }
}
