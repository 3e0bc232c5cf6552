//! Mixed-variable variation: SBX and polynomial mutation on continuous genes,
//! uniform swap and re-draw on categorical genes, and the query-revert step.

use rand::Rng;

use crate::design_space::{pin_fixed_features, DesignPoint, DesignSchema, FeatureKind, Value};
use crate::scalar::Scalar;

use super::{Individual, OptimizerConfig};

const SBX_EPS: f64 = 1e-14;

/// Bounded simulated binary crossover of one gene pair.
pub fn sbx_pair<R: Rng + ?Sized>(a: f64, b: f64, lower: f64, upper: f64, eta: f64, rng: &mut R) -> (f64, f64) {
    if (a - b).abs() <= SBX_EPS || upper <= lower {
        return (a, b);
    }
    let (y1, y2) = if a < b { (a, b) } else { (b, a) };
    let u: f64 = rng.gen();
    let spread = |beta: f64| {
        let alpha = 2.0 - beta.powf(-(eta + 1.0));
        if u <= 1.0 / alpha {
            (u * alpha).powf(1.0 / (eta + 1.0))
        } else {
            (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
        }
    };
    let bq1 = spread(1.0 + 2.0 * (y1 - lower) / (y2 - y1));
    let bq2 = spread(1.0 + 2.0 * (upper - y2) / (y2 - y1));
    let c1 = (0.5 * ((y1 + y2) - bq1 * (y2 - y1))).clamp(lower, upper);
    let c2 = (0.5 * ((y1 + y2) + bq2 * (y2 - y1))).clamp(lower, upper);
    if rng.gen::<bool>() {
        (c2, c1)
    } else {
        (c1, c2)
    }
}

/// Bounded polynomial mutation of one gene.
pub fn polynomial_mutation<R: Rng + ?Sized>(y: f64, lower: f64, upper: f64, eta: f64, rng: &mut R) -> f64 {
    let width = upper - lower;
    if width <= 0.0 {
        return y;
    }
    let d1 = (y - lower) / width;
    let d2 = (upper - y) / width;
    let u: f64 = rng.gen();
    let power = 1.0 / (eta + 1.0);
    let dq = if u < 0.5 {
        let val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
        val.powf(power) - 1.0
    } else {
        let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
        1.0 - val.powf(power)
    };
    (y + dq * width).clamp(lower, upper)
}

/// Independently per actionable feature, resets the value to the query's with
/// probability `probability`.
pub fn revert_operator<S: Scalar, R: Rng + ?Sized>(
    schema: &DesignSchema<S>,
    p: &mut DesignPoint<S>,
    query: &DesignPoint<S>,
    probability: f64,
    rng: &mut R,
) {
    for (i, f) in schema.features().iter().enumerate() {
        if f.actionable && rng.gen::<f64>() < probability {
            p.values_mut()[i] = query[i];
        }
    }
}

/// Binary tournament on (rank, then crowding); ties keep the first draw.
pub fn tournament<S: Scalar, R: Rng + ?Sized>(parents: &[Individual<S>], rng: &mut R) -> usize {
    let i = rng.gen_range(0..parents.len());
    let j = rng.gen_range(0..parents.len());
    let (a, b) = (&parents[i], &parents[j]);
    if b.rank < a.rank || (b.rank == a.rank && b.crowding > a.crowding) {
        j
    } else {
        i
    }
}

fn crossover<S: Scalar, R: Rng + ?Sized>(
    schema: &DesignSchema<S>,
    a: &mut DesignPoint<S>,
    b: &mut DesignPoint<S>,
    eta: f64,
    rng: &mut R,
) {
    for (i, f) in schema.features().iter().enumerate() {
        if !f.actionable || !rng.gen::<bool>() {
            continue;
        }
        match (&f.kind, a[i], b[i]) {
            (FeatureKind::Continuous { lower, upper }, Value::Real(x), Value::Real(y)) => {
                let (c1, c2) = sbx_pair(x.as_f64(), y.as_f64(), lower.as_f64(), upper.as_f64(), eta, rng);
                a.values_mut()[i] = Value::Real(clip(S::lit(c1), *lower, *upper));
                b.values_mut()[i] = Value::Real(clip(S::lit(c2), *lower, *upper));
            }
            _ => {
                let tmp = a[i];
                a.values_mut()[i] = b[i];
                b.values_mut()[i] = tmp;
            }
        }
    }
}

fn clip<S: Scalar>(x: S, lower: S, upper: S) -> S {
    x.max(lower).min(upper)
}

fn mutate<S: Scalar, R: Rng + ?Sized>(
    schema: &DesignSchema<S>,
    p: &mut DesignPoint<S>,
    probability: f64,
    eta: f64,
    rng: &mut R,
) {
    for (i, f) in schema.features().iter().enumerate() {
        if !f.actionable || rng.gen::<f64>() >= probability {
            continue;
        }
        let next = match (&f.kind, p[i]) {
            (FeatureKind::Continuous { lower, upper }, Value::Real(x)) => {
                let y = polynomial_mutation(x.as_f64(), lower.as_f64(), upper.as_f64(), eta, rng);
                Value::Real(clip(S::lit(y), *lower, *upper))
            }
            (FeatureKind::Categorical { categories }, _) => {
                Value::Category(rng.gen_range(0..categories.len()) as u32)
            }
            (_, v) => v,
        };
        p.values_mut()[i] = next;
    }
}

/// Produces `parents.len()` offspring: tournament, crossover, mutation, revert,
/// then non-actionable genes pinned to the query.
pub fn make_offspring<S: Scalar, R: Rng + ?Sized>(
    schema: &DesignSchema<S>,
    parents: &[Individual<S>],
    query: &DesignPoint<S>,
    config: &OptimizerConfig,
    rng: &mut R,
) -> Vec<DesignPoint<S>> {
    let n = parents.len();
    let pm = config.mutation_probability_for(schema);
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let mut a = parents[tournament(parents, rng)].point.clone();
        let mut b = parents[tournament(parents, rng)].point.clone();
        if rng.gen::<f64>() < config.crossover_probability {
            crossover(schema, &mut a, &mut b, config.eta_c, rng);
        }
        for child in [&mut a, &mut b] {
            mutate(schema, child, pm, config.eta_m, rng);
            revert_operator(schema, child, query, config.revert_probability, rng);
            pin_fixed_features(schema, query, child);
        }
        out.push(a);
        out.push(b);
    }
    out.truncate(n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::FeatureSpec;
    use crate::objectives::ObjectiveValues;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mixed_schema() -> DesignSchema<f64> {
        DesignSchema::new(vec![
            FeatureSpec::continuous("a", 0.0, 1.0),
            FeatureSpec::categorical("m", ["x", "y"]),
            FeatureSpec::continuous("fixed", 0.0, 10.0).fixed(),
        ])
        .unwrap()
    }

    fn individual(point: DesignPoint<f64>, rank: usize, crowding: f64) -> Individual<f64> {
        Individual {
            point,
            objectives: ObjectiveValues {
                proximity: 0.0,
                sparsity: 0.0,
                manifold: 0.0,
                auxiliary: vec![],
            },
            fitness: vec![0.0; 3],
            violation: 0.0,
            channels: vec![],
            rank,
            crowding,
        }
    }

    fn query() -> DesignPoint<f64> {
        DesignPoint::new(vec![Value::Real(0.1), Value::Category(0), Value::Real(3.0)])
    }

    #[test]
    fn sbx_stays_in_bounds_and_preserves_mean_when_unclipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            let (c1, c2) = sbx_pair(a, b, 0.0, 1.0, 15.0, &mut rng);
            assert!((0.0..=1.0).contains(&c1) && (0.0..=1.0).contains(&c2));
        }
        let (c1, c2) = sbx_pair(0.4, 0.6, -1e9, 1e9, 15.0, &mut rng);
        assert!((c1 + c2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn polynomial_mutation_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let y: f64 = rng.gen();
            let m = polynomial_mutation(y, 0.0, 1.0, 20.0, &mut rng);
            assert!((0.0..=1.0).contains(&m));
        }
        assert_eq!(polynomial_mutation(0.3, 0.5, 0.5, 20.0, &mut rng), 0.3);
    }

    #[test]
    fn revert_extremes() {
        let schema = mixed_schema();
        let q = query();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let original = DesignPoint::new(vec![Value::Real(0.9), Value::Category(1), Value::Real(3.0)]);
        let mut p = original.clone();
        revert_operator(&schema, &mut p, &q, 1.0, &mut rng);
        assert_eq!(p, q);
        let mut p = original.clone();
        revert_operator(&schema, &mut p, &q, 0.0, &mut rng);
        assert_eq!(p, original);
    }

    #[test]
    fn revert_frequency_half() {
        let features = (0..20).map(|i| FeatureSpec::continuous(format!("f{i}"), 0.0, 1.0)).collect();
        let schema = DesignSchema::new(features).unwrap();
        let q = DesignPoint::reals(&[0.0; 20]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 20];
        let trials = 10_000;
        for _ in 0..trials {
            let mut p = DesignPoint::reals(&[1.0; 20]);
            revert_operator(&schema, &mut p, &q, 0.5, &mut rng);
            for (c, v) in counts.iter_mut().zip(p.values()) {
                if *v == Value::Real(0.0) {
                    *c += 1;
                }
            }
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.5).abs() <= 0.02, "{f}");
        }
    }

    #[test]
    fn no_variation_copies_tournament_winners() {
        let schema = mixed_schema();
        let q = query();
        let parents: Vec<_> = (0..6)
            .map(|i| {
                individual(
                    DesignPoint::new(vec![Value::Real(i as f64 / 10.0), Value::Category(i % 2), Value::Real(3.0)]),
                    i as usize,
                    1.0,
                )
            })
            .collect();
        let config = OptimizerConfig {
            crossover_probability: 0.0,
            mutation_probability: Some(0.0),
            revert_probability: 0.0,
            ..OptimizerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kids = make_offspring(&schema, &parents, &q, &config, &mut rng);
        assert_eq!(kids.len(), parents.len());
        for k in &kids {
            assert!(parents.iter().any(|p| &p.point == k));
        }
        // rank 5 can only win a tournament against itself
        let worst_wins = kids.iter().filter(|k| **k == parents[5].point).count();
        assert!(worst_wins <= 2);
    }

    #[test]
    fn categorical_redraw_covers_both_categories() {
        let schema = mixed_schema();
        let q = query();
        let config = OptimizerConfig {
            crossover_probability: 0.0,
            mutation_probability: Some(1.0),
            revert_probability: 0.0,
            ..OptimizerConfig::default()
        };
        let parents = vec![individual(q.clone(), 0, 1.0); 4];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut seen = [0usize; 2];
        for _ in 0..500 {
            for k in make_offspring(&schema, &parents, &q, &config, &mut rng) {
                if let Value::Category(c) = k[1] {
                    seen[c as usize] += 1;
                }
            }
        }
        let total = (seen[0] + seen[1]) as f64;
        assert!((seen[0] as f64 / total - 0.5).abs() < 0.03, "{seen:?}");
    }

    #[test]
    fn fixed_gene_always_matches_query() {
        let schema = mixed_schema();
        let q = query();
        let parents: Vec<_> = (0..10)
            .map(|i| {
                individual(
                    DesignPoint::new(vec![Value::Real(i as f64 / 10.0), Value::Category(i % 2), Value::Real(i as f64)]),
                    0,
                    1.0,
                )
            })
            .collect();
        let config = OptimizerConfig {
            mutation_probability: Some(1.0),
            ..OptimizerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 1000 {
            for k in make_offspring(&schema, &parents, &q, &config, &mut rng) {
                assert_eq!(k[2], Value::Real(3.0));
                assert!(schema.validate_point(&k).is_ok());
                checked += 1;
            }
        }
    }
}
