use mcd_core::design_space::{Dataset, DesignPoint, DesignSchema, FeatureSpec, Value};
use mcd_core::objectives::{avg_gower_to_knn, changed_feature_ratio, gower_distance, CHANGE_TOLERANCE};
use mcd_core::optimizer::{dominates, nondominated_sort, Ranked};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Ind {
    f: Vec<f64>,
    v: f64,
}

impl Ranked<f64> for Ind {
    fn fitness(&self) -> &[f64] {
        &self.f
    }
    fn violation(&self) -> f64 {
        self.v
    }
}

/// Peel fronts by repeatedly taking everything no remaining member dominates.
fn brute_force_fronts(pop: &[Ind]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..pop.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| j != i && dominates(&pop[j], &pop[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

#[test]
fn sort_matches_brute_force_on_random_populations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let n = rng.gen_range(1..60);
        let m = rng.gen_range(1..5);
        let pop: Vec<Ind> = (0..n)
            .map(|_| Ind {
                // coarse grid so ties and duplicates are common
                f: (0..m).map(|_| rng.gen_range(0..6) as f64).collect(),
                v: if rng.gen_bool(0.3) { rng.gen_range(1..4) as f64 } else { 0.0 },
            })
            .collect();
        assert_eq!(nondominated_sort(&pop), brute_force_fronts(&pop), "trial {trial}");
    }
}

fn mixed_schema(scale: f64, shift: f64) -> DesignSchema<f64> {
    DesignSchema::new(vec![
        FeatureSpec::continuous("a", shift, scale + shift),
        FeatureSpec::continuous("b", -2.0 * scale + shift, 3.0 * scale + shift),
        FeatureSpec::categorical("c", ["p", "q", "r"]),
        FeatureSpec::continuous("d", shift, 10.0 * scale + shift),
    ])
    .unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, scale: f64, shift: f64) -> DesignPoint<f64> {
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi) * scale + shift;
    let a = u(0.0, 1.0);
    let b = u(-2.0, 3.0);
    let d = u(0.0, 10.0);
    DesignPoint::new(vec![Value::Real(a), Value::Real(b), Value::Category(rng.gen_range(0..3)), Value::Real(d)])
}

#[test]
fn gower_metric_axioms_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ranges = [1.0, 5.0, 0.0, 10.0];
    for _ in 0..10_000 {
        let (p, q, r) = (
            random_point(&mut rng, 1.0, 0.0),
            random_point(&mut rng, 1.0, 0.0),
            random_point(&mut rng, 1.0, 0.0),
        );
        let d = |x: &DesignPoint<f64>, y: &DesignPoint<f64>| gower_distance(x, y, &ranges).unwrap();
        assert_eq!(d(&p, &p), 0.0);
        assert!(d(&p, &q) >= 0.0 && d(&p, &q) <= 1.0);
        assert_eq!(d(&p, &q), d(&q, &p));
        assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-12);
    }
}

#[test]
fn objectives_invariant_under_affine_rescaling() {
    let (scale, shift) = (37.5, -1200.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base: Vec<DesignPoint<f64>> = (0..200).map(|_| random_point(&mut rng, 1.0, 0.0)).collect();
    let map = |p: &DesignPoint<f64>| {
        DesignPoint::new(
            p.values()
                .iter()
                .map(|v| match v {
                    Value::Real(x) => Value::Real(x * scale + shift),
                    c => *c,
                })
                .collect(),
        )
    };
    let scaled: Vec<DesignPoint<f64>> = base.iter().map(map).collect();
    let d0 = Dataset::new(mixed_schema(1.0, 0.0), base[10..].to_vec()).unwrap();
    let d1 = Dataset::new(mixed_schema(scale, shift), scaled[10..].to_vec()).unwrap();
    let (q0, q1) = (&base[0], &scaled[0]);
    for i in 1..10 {
        let (p0, p1) = (&base[i], &scaled[i]);
        let g0 = gower_distance(p0, q0, d0.ranges()).unwrap();
        let g1 = gower_distance(p1, q1, d1.ranges()).unwrap();
        assert!((g0 - g1).abs() < 1e-9);
        let s0 = changed_feature_ratio(p0, q0, d0.ranges(), CHANGE_TOLERANCE).unwrap();
        let s1 = changed_feature_ratio(p1, q1, d1.ranges(), CHANGE_TOLERANCE).unwrap();
        assert_eq!(s0, s1);
        let k0 = avg_gower_to_knn(p0, &d0, 5).unwrap();
        let k1 = avg_gower_to_knn(p1, &d1, 5).unwrap();
        assert!((k0 - k1).abs() < 1e-9);
    }
}
