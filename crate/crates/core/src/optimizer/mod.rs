//! Mixed-variable NSGA-II with constrained domination and a query-revert
//! operator. Every feasible design it touches lands in a [`CandidateArchive`].

mod archive;
mod operators;
mod sorting;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{random_point, DesignPoint, DesignSchema};
use crate::objectives::ObjectiveValues;
use crate::problem::{ProblemError, ProblemSpec};
use crate::scalar::Scalar;

pub use archive::{ArchiveEntry, ArchiveError, CandidateArchive, ARCHIVE_SCHEMA_VERSION};
pub use operators::{make_offspring, polynomial_mutation, revert_operator, sbx_pair, tournament};
pub use sorting::{crowding_distance, dominates, nondominated_sort, Ranked};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_probability: f64,
    pub eta_c: f64,
    /// Per-variable mutation probability; `None` means 1 / actionable features.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation_probability: Option<f64>,
    pub eta_m: f64,
    pub revert_probability: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            population_size: 100,
            generations: 100,
            crossover_probability: 0.9,
            eta_c: 15.0,
            mutation_probability: None,
            eta_m: 20.0,
            revert_probability: 0.05,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.population_size < 4 || self.population_size % 2 != 0 {
            return Err(format!(
                "population_size must be an even number of at least 4, got {}",
                self.population_size
            ));
        }
        let probs = [
            ("crossover_probability", Some(self.crossover_probability)),
            ("mutation_probability", self.mutation_probability),
            ("revert_probability", Some(self.revert_probability)),
        ];
        for (name, p) in probs {
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("{name} must lie in [0, 1], got {p}"));
                }
            }
        }
        for (name, eta) in [("eta_c", self.eta_c), ("eta_m", self.eta_m)] {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(format!("{name} must be positive and finite, got {eta}"));
            }
        }
        Ok(())
    }

    pub fn mutation_probability_for<S: Scalar>(&self, schema: &DesignSchema<S>) -> f64 {
        self.mutation_probability
            .unwrap_or_else(|| 1.0 / schema.actionable_count().max(1) as f64)
    }
}

/// A design with its evaluations and, once sorted, its rank and crowding.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual<S> {
    pub point: DesignPoint<S>,
    pub objectives: ObjectiveValues<S>,
    /// `objectives` flattened in minimization form.
    pub fitness: Vec<S>,
    pub violation: S,
    pub channels: Vec<S>,
    pub rank: usize,
    pub crowding: S,
}

impl<S: Scalar> Ranked<S> for Individual<S> {
    fn fitness(&self) -> &[S] {
        &self.fitness
    }

    fn violation(&self) -> S {
        self.violation
    }
}

/// Per-generation status. Generation 0 is the initial population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Progress {
    pub generation: usize,
    pub feasible: usize,
    pub best_violation: f64,
    pub archive_size: usize,
    pub evaluations: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum OptimizationError<S: Scalar> {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("optimization aborted in generation {generation}: {source}")]
    Aborted {
        generation: usize,
        /// Everything archived before the failure.
        archive: Box<CandidateArchive<S>>,
        #[source]
        source: ProblemError,
    },
}

impl<S: Scalar> OptimizationError<S> {
    pub fn partial_archive(&self) -> Option<&CandidateArchive<S>> {
        match self {
            OptimizationError::Aborted { archive, .. } => Some(archive),
            OptimizationError::Config(_) => None,
        }
    }
}

fn evaluate<S: Scalar>(spec: &ProblemSpec<S>, points: Vec<DesignPoint<S>>) -> Result<Vec<Individual<S>>, ProblemError> {
    let evals = spec.evaluate_batch(&points)?;
    Ok(points
        .into_iter()
        .zip(evals)
        .map(|(point, e)| Individual {
            point,
            fitness: e.objectives.to_vec(),
            objectives: e.objectives,
            violation: e.violation,
            channels: e.channels,
            rank: 0,
            crowding: S::zero(),
        })
        .collect())
}

fn archive_feasible<S: Scalar>(archive: &mut CandidateArchive<S>, query: &DesignPoint<S>, pop: &[Individual<S>]) {
    for ind in pop {
        if ind.violation == S::zero() && ind.point != *query {
            archive.insert(ArchiveEntry {
                point: ind.point.clone(),
                objectives: ind.objectives.clone(),
                channels: ind.channels.clone(),
            });
        }
    }
}

/// Elitist truncation of `combined` to `n` members, filling front by front and
/// cutting the last front by descending crowding (ties to lower index).
fn survive<S: Scalar>(combined: Vec<Individual<S>>, n: usize) -> Vec<Individual<S>> {
    let fronts = nondominated_sort(&combined);
    let mut slots: Vec<Option<Individual<S>>> = combined.into_iter().map(Some).collect();
    let mut next = Vec::with_capacity(n);
    for (rank, front) in fronts.iter().enumerate() {
        if next.len() >= n {
            break;
        }
        let crowd = {
            let members: Vec<&Individual<S>> = front.iter().map(|&i| slots[i].as_ref().expect("unused")).collect();
            crowding_distance(&members)
        };
        let mut order: Vec<usize> = (0..front.len()).collect();
        if next.len() + front.len() > n {
            order.sort_by(|&a, &b| {
                crowd[b]
                    .partial_cmp(&crowd[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            order.truncate(n - next.len());
        }
        for k in order {
            let mut ind = slots[front[k]].take().expect("each index appears once");
            ind.rank = rank;
            ind.crowding = crowd[k];
            next.push(ind);
        }
    }
    next
}

fn report<S: Scalar>(
    generation: usize,
    pop: &[Individual<S>],
    archive: &CandidateArchive<S>,
    spec: &ProblemSpec<S>,
    sink: &mut dyn FnMut(&Progress),
) {
    let feasible = pop.iter().filter(|i| i.violation == S::zero()).count();
    let best = pop.iter().map(|i| i.violation).fold(S::infinity(), S::min);
    let p = Progress {
        generation,
        feasible,
        best_violation: best.as_f64(),
        archive_size: archive.len(),
        evaluations: spec.evaluations(),
    };
    log::debug!(
        "generation {}: feasible {}/{}, best violation {:e}, archive {}",
        p.generation,
        p.feasible,
        pop.len(),
        p.best_violation,
        p.archive_size
    );
    sink(&p);
}

/// Runs NSGA-II from the query plus random dataset rows and archives every
/// feasible, query-distinct design it evaluates.
pub fn run_optimization<S: Scalar>(
    spec: &ProblemSpec<S>,
    config: &OptimizerConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<CandidateArchive<S>, OptimizationError<S>> {
    config.validate().map_err(OptimizationError::Config)?;
    let schema = spec.schema();
    let query = spec.query();
    let n = config.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut archive = CandidateArchive::new(
        spec.problem_hash(),
        config.clone(),
        spec.channels().to_vec(),
        spec.aux_objectives().iter().map(|o| o.name.clone()).collect(),
    );

    let mut initial = Vec::with_capacity(n);
    initial.push(query.clone());
    for _ in 1..n {
        initial.push(random_point(spec.dataset(), query, &mut rng).expect("problem datasets are nonempty"));
    }
    let abort = |generation, archive: CandidateArchive<S>, source| OptimizationError::Aborted {
        generation,
        archive: Box::new(archive),
        source,
    };
    let pop = match evaluate(spec, initial) {
        Ok(p) => p,
        Err(e) => return Err(abort(0, archive, e)),
    };
    archive_feasible(&mut archive, query, &pop);
    let mut pop = survive(pop, n);
    report(0, &pop, &archive, spec, progress);

    for generation in 1..=config.generations {
        let children = make_offspring(schema, &pop, query, config, &mut rng);
        let children = match evaluate(spec, children) {
            Ok(c) => c,
            Err(e) => return Err(abort(generation, archive, e)),
        };
        archive_feasible(&mut archive, query, &children);
        pop.extend(children);
        pop = survive(pop, n);
        report(generation, &pop, &archive, spec, progress);
    }
    Ok(archive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench2d;
    use crate::design_space::{Dataset, FeatureSpec};
    use crate::predictors::{FnPredictor, Predictor, PredictorError};
    use crate::problem::OutputConstraint;

    fn small_config(seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            population_size: 40,
            generations: 15,
            seed,
            ..OptimizerConfig::default()
        }
    }

    fn bench_problem() -> ProblemSpec<f64> {
        bench2d::problem(bench2d::default_dataset(), bench2d::query("D1").unwrap()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        for bad in [
            OptimizerConfig { population_size: 3, ..Default::default() },
            OptimizerConfig { population_size: 7, ..Default::default() },
            OptimizerConfig { crossover_probability: 1.5, ..Default::default() },
            OptimizerConfig { eta_m: 0.0, ..Default::default() },
            OptimizerConfig { mutation_probability: Some(-0.1), ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn archive_is_sound_and_progress_monotone() {
        let spec = bench_problem();
        let mut events = Vec::new();
        let archive = run_optimization(&spec, &small_config(3), &mut |p| events.push(*p)).unwrap();
        assert!(!archive.is_empty());
        for e in archive.entries() {
            let (x1, x2) = (e.point[0].as_real().unwrap(), e.point[1].as_real().unwrap());
            assert!(bench2d::is_feasible(x1, x2));
            assert_ne!(&e.point, spec.query());
        }
        assert_eq!(events.len(), 16);
        for w in events.windows(2) {
            assert!(w[1].best_violation <= w[0].best_violation);
            assert!(w[1].archive_size >= w[0].archive_size);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let a = run_optimization(&bench_problem(), &small_config(9), &mut |_| {}).unwrap();
        let b = run_optimization(&bench_problem(), &small_config(9), &mut |_| {}).unwrap();
        let c = run_optimization(&bench_problem(), &small_config(10), &mut |_| {}).unwrap();
        let schema = bench2d::schema::<f64>();
        assert_eq!(a.to_json(&schema), b.to_json(&schema));
        assert_ne!(a.to_json(&schema), c.to_json(&schema));
    }

    #[test]
    fn zero_generations_archives_initial_feasible_members() {
        let spec = bench_problem();
        let config = OptimizerConfig {
            population_size: 200,
            generations: 0,
            ..small_config(1)
        };
        let archive = run_optimization(&spec, &config, &mut |_| {}).unwrap();
        assert!(archive.entries().iter().all(|e| {
            spec.dataset().rows().contains(&e.point)
        }));
    }

    fn toy(constraint: OutputConstraint) -> ProblemSpec<f64> {
        let schema = DesignSchema::new(vec![FeatureSpec::continuous("x", 0.0, 1.0)]).unwrap();
        let rows = (0..20).map(|i| DesignPoint::reals(&[i as f64 / 19.0])).collect();
        ProblemSpec::builder(Dataset::new(schema, rows).unwrap(), DesignPoint::reals(&[0.0]))
            .predictor(Box::new(FnPredictor::new("id", &["y"], |p: &DesignPoint<f64>| {
                vec![p[0].as_real().unwrap()]
            })))
            .output_constraint(constraint)
            .knn(3)
            .build()
            .unwrap()
    }

    #[test]
    fn empty_feasible_set_gives_empty_archive() {
        let spec = toy(OutputConstraint::at_least("y", 2.0));
        let archive = run_optimization(&spec, &small_config(2), &mut |_| {}).unwrap();
        assert!(archive.is_empty());
    }

    struct Flaky {
        spec: crate::predictors::PredictorSpec,
        calls: std::sync::atomic::AtomicUsize,
    }

    impl Predictor<f64> for Flaky {
        fn spec(&self) -> &crate::predictors::PredictorSpec {
            &self.spec
        }

        fn evaluate(&self, _: &DesignSchema<f64>, designs: &[DesignPoint<f64>]) -> Result<Vec<Vec<f64>>, PredictorError> {
            if self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) >= 3 {
                return Err(PredictorError::Exited("gone".into()));
            }
            Ok(designs.iter().map(|p| vec![p[0].as_real().unwrap()]).collect())
        }
    }

    #[test]
    fn predictor_failure_keeps_partial_archive() {
        let schema = DesignSchema::new(vec![FeatureSpec::continuous("x", 0.0, 1.0)]).unwrap();
        let rows = (0..20).map(|i| DesignPoint::reals(&[i as f64 / 19.0])).collect();
        let flaky = Flaky {
            spec: crate::predictors::PredictorSpec {
                name: "flaky".into(),
                channels: vec!["y".into()],
                backend: crate::predictors::Backend::InProcess("flaky".into()),
            },
            calls: Default::default(),
        };
        let spec = ProblemSpec::builder(Dataset::new(schema, rows).unwrap(), DesignPoint::reals(&[0.0]))
            .predictor(Box::new(flaky))
            .output_constraint(OutputConstraint::at_least("y", 0.5))
            .knn(3)
            .build()
            .unwrap();
        let err = run_optimization(&spec, &small_config(4), &mut |_| {}).unwrap_err();
        match &err {
            OptimizationError::Aborted { generation, archive, .. } => {
                assert_eq!(*generation, 3);
                assert!(!archive.is_empty());
            }
            other => panic!("{other}"),
        }
    }
}
