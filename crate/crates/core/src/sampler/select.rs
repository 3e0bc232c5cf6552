use std::cmp::Ordering;

use crate::design_space::DesignPoint;
use crate::objectives::gower_unchecked;
use crate::scalar::Scalar;

/// Symmetric pairwise diversity `D_ij` with zero diagonal.
pub trait DiversityKernel {
    fn len(&self) -> usize;
    fn get(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(Q_i·Q_j)^(1/w_d)`.
pub fn quality_weight(qi: f64, qj: f64, w_d: f64) -> f64 {
    (qi * qj).powf(1.0 / w_d)
}

/// Computes `δ_G(i,j)·(Q_i·Q_j)^(1/w_d)` on demand.
pub struct LazyDiversity<'a, S> {
    points: Vec<&'a DesignPoint<S>>,
    ranges: &'a [S],
    qualities: &'a [f64],
    w_d: f64,
}

impl<'a, S: Scalar> LazyDiversity<'a, S> {
    pub fn new(points: Vec<&'a DesignPoint<S>>, ranges: &'a [S], qualities: &'a [f64], w_d: f64) -> Self {
        assert_eq!(points.len(), qualities.len());
        LazyDiversity {
            points,
            ranges,
            qualities,
            w_d,
        }
    }
}

impl<S: Scalar> DiversityKernel for LazyDiversity<'_, S> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let d = gower_unchecked(self.points[i].values(), self.points[j].values(), self.ranges).as_f64();
        d * quality_weight(self.qualities[i], self.qualities[j], self.w_d)
    }
}

/// Dense row-major diversity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DiversityMatrix {
    pub fn from_kernel(k: &impl DiversityKernel) -> Self {
        let n = k.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = k.get(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        DiversityMatrix { n, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

impl DiversityKernel for DiversityMatrix {
    fn len(&self) -> usize {
        self.n
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Full diversity matrix over `points`.
pub fn diversity_matrix<S: Scalar>(points: &[&DesignPoint<S>], ranges: &[S], qualities: &[f64], w_d: f64) -> DiversityMatrix {
    DiversityMatrix::from_kernel(&LazyDiversity::new(points.to_vec(), ranges, qualities, w_d))
}

fn by_quality(q: &[f64], a: usize, b: usize) -> Ordering {
    q[b].partial_cmp(&q[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Greedy maximin selection. Starts from the best-quality entry, then repeatedly
/// adds the entry whose smallest diversity to the chosen set is largest.
/// Ties go to higher quality, then lower index. When `count` covers the pool,
/// the whole pool is returned ordered by quality. Returns `None` for an empty pool.
pub fn k_greedy_sample(kernel: &impl DiversityKernel, qualities: &[f64], count: usize) -> Option<Vec<usize>> {
    let n = kernel.len();
    assert_eq!(n, qualities.len());
    if n == 0 {
        return None;
    }
    if count >= n {
        let mut all: Vec<usize> = (0..n).collect();
        all.sort_by(|&a, &b| by_quality(qualities, a, b));
        return Some(all);
    }
    let first = (0..n).min_by(|&a, &b| by_quality(qualities, a, b)).expect("nonempty");
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|j| kernel.get(first, j)).collect();
    while chosen.len() < count {
        let mut best: Option<usize> = None;
        for j in (0..n).filter(|&j| !taken[j]) {
            best = match best {
                None => Some(j),
                Some(b) => {
                    let better = match nearest[j].partial_cmp(&nearest[b]) {
                        Some(Ordering::Greater) => true,
                        Some(Ordering::Less) => false,
                        _ => qualities[j] > qualities[b],
                    };
                    Some(if better { j } else { b })
                }
            };
        }
        let pick = best.expect("count < n leaves candidates");
        taken[pick] = true;
        chosen.push(pick);
        for j in 0..n {
            if !taken[j] {
                nearest[j] = nearest[j].min(kernel.get(pick, j));
            }
        }
    }
    Some(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(xs: &[f64]) -> Vec<DesignPoint<f64>> {
        xs.iter().map(|x| DesignPoint::reals(&[*x])).collect()
    }

    #[test]
    fn collinear_extremes() {
        let p = pts(&[0.0, 0.5, 1.0]);
        let refs: Vec<_> = p.iter().collect();
        let q = [1.0, 1.0, 1.0];
        let m = diversity_matrix(&refs, &[1.0], &q, 0.2);
        let mut sel = k_greedy_sample(&m, &q, 2).unwrap();
        sel.sort();
        assert_eq!(sel, vec![0, 2]);
    }

    #[test]
    fn single_pick_is_best_quality() {
        let p = pts(&[0.0, 0.5, 1.0]);
        let refs: Vec<_> = p.iter().collect();
        let q = [0.3, 0.9, 0.9];
        let m = diversity_matrix(&refs, &[1.0], &q, 1.0);
        assert_eq!(k_greedy_sample(&m, &q, 1).unwrap(), vec![1]);
    }

    #[test]
    fn exhaustion_returns_pool_by_quality() {
        let p = pts(&[0.0, 1.0]);
        let refs: Vec<_> = p.iter().collect();
        let q = [0.2, 0.7];
        let m = diversity_matrix(&refs, &[1.0], &q, 1.0);
        assert_eq!(k_greedy_sample(&m, &q, 5).unwrap(), vec![1, 0]);
        let empty = DiversityMatrix { n: 0, data: vec![] };
        assert_eq!(k_greedy_sample(&empty, &[], 3), None);
    }

    #[test]
    fn matrix_properties() {
        let p = pts(&[0.0, 0.25, 1.0]);
        let refs: Vec<_> = p.iter().collect();
        let unit = [1.0; 3];
        let m = diversity_matrix(&refs, &[1.0], &unit, 0.3);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.get(0, 2), 1.0);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        let q = [0.6, 0.8, 0.9];
        let m = diversity_matrix(&refs, &[1.0], &q, 1e6);
        assert!((m.get(0, 2) - 1.0).abs() < 1e-6);
        assert!((m.get(0, 1) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn lazy_and_dense_select_identically() {
        let p = pts(&[0.1, 0.9, 0.4, 0.45, 0.75, 0.0, 0.3]);
        let refs: Vec<_> = p.iter().collect();
        let q = [0.5, 0.6, 0.9, 0.2, 0.7, 0.1, 0.8];
        let lazy = LazyDiversity::new(refs.clone(), &[1.0], &q, 0.7);
        let dense = diversity_matrix(&refs, &[1.0], &q, 0.7);
        for k in 1..=7 {
            assert_eq!(k_greedy_sample(&lazy, &q, k), k_greedy_sample(&dense, &q, k));
        }
    }

    fn min_pairwise(sel: &[usize], xs: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for (a, &i) in sel.iter().enumerate() {
            for &j in &sel[a + 1..] {
                m = m.min((xs[i] - xs[j]).abs());
            }
        }
        m
    }

    proptest! {
        #[test]
        fn scaling_qualities_keeps_selection(
            xs in prop::collection::vec(0.0f64..1.0, 2..30),
            seed_q in prop::collection::vec(0.05f64..1.0, 30),
            c in 0.01f64..0.99,
            count in 1usize..8,
            w_d in 0.1f64..10.0,
        ) {
            let p = pts(&xs);
            let refs: Vec<_> = p.iter().collect();
            let q: Vec<f64> = seed_q[..xs.len()].to_vec();
            let qs: Vec<f64> = q.iter().map(|v| v * c).collect();
            let a = k_greedy_sample(&LazyDiversity::new(refs.clone(), &[1.0], &q, w_d), &q, count);
            let b = k_greedy_sample(&LazyDiversity::new(refs, &[1.0], &qs, w_d), &qs, count);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn min_spacing_non_increasing_in_count(xs in prop::collection::vec(0.0f64..1.0, 3..25)) {
            let p = pts(&xs);
            let refs: Vec<_> = p.iter().collect();
            let q = vec![1.0; xs.len()];
            let kernel = LazyDiversity::new(refs, &[1.0], &q, 1.0);
            let mut prev = f64::INFINITY;
            for k in 2..xs.len() {
                let sel = k_greedy_sample(&kernel, &q, k).unwrap();
                let m = min_pairwise(&sel, &xs);
                prop_assert!(m <= prev + 1e-15);
                prev = m;
            }
        }
    }
}
