use std::cmp::Ordering;

use crate::scalar::Scalar;

/// Anything with a minimization fitness vector and a constraint violation.
pub trait Ranked<S> {
    fn fitness(&self) -> &[S];
    fn violation(&self) -> S;
}

/// Constrained domination: feasibility first, then smaller violation, then Pareto.
pub fn dominates<S: Scalar, T: Ranked<S> + ?Sized>(a: &T, b: &T) -> bool {
    let (va, vb) = (a.violation(), b.violation());
    let zero = S::zero();
    match (va <= zero, vb <= zero) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => va < vb,
        (true, true) => pareto_dominates(a.fitness(), b.fitness()),
    }
}

pub(crate) fn pareto_dominates<S: Scalar>(a: &[S], b: &[S]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Fast non-dominated sort. Returns fronts of indices, each in ascending index order.
pub fn nondominated_sort<S: Scalar, T: Ranked<S>>(population: &[T]) -> Vec<Vec<usize>> {
    let n = population.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&population[i], &population[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(&population[j], &population[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// NSGA-II crowding distance over one front, aligned with `front`.
/// Boundary members of each non-degenerate objective get `S::infinity()`;
/// an objective that is constant across the front contributes nothing.
pub fn crowding_distance<S: Scalar, T: Ranked<S>>(front: &[&T]) -> Vec<S> {
    let n = front.len();
    if n <= 2 {
        return vec![S::infinity(); n];
    }
    let m = front[0].fitness().len();
    let mut dist = vec![S::zero(); n];
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        let f = |i: usize| front[i].fitness()[k];
        order.sort_by(|&a, &b| f(a).partial_cmp(&f(b)).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        let (lo, hi) = (f(order[0]), f(order[n - 1]));
        let span = hi - lo;
        if !(span > S::zero()) || !span.is_finite() {
            continue;
        }
        dist[order[0]] = S::infinity();
        dist[order[n - 1]] = S::infinity();
        for w in 1..n - 1 {
            let i = order[w];
            if dist[i].is_finite() {
                dist[i] += (f(order[w + 1]) - f(order[w - 1])) / span;
            }
        }
    }
    dist
}
