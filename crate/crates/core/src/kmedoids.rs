//! Two-medoid clustering of a bag's instances.
//!
//! Bags of up to [`EXACT_LIMIT`] points are solved exactly by scoring every
//! medoid pair. Larger bags use Voronoi iteration (assign to nearest medoid,
//! move each medoid to its cluster's distance-sum minimizer) from the
//! farthest pair, followed by best-improvement medoid swaps.

use crate::nj::DistanceMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoMedoids {
    /// Medoid indices, ascending.
    pub medoids: (usize, usize),
    /// Cluster of each point: 0 for `medoids.0`, 1 for `medoids.1`.
    pub assignment: Vec<u8>,
    /// Sum of distances from every point to its nearest medoid.
    pub cost: f64,
    pub iterations: usize,
}

fn cost_of(d: &DistanceMatrix, a: usize, b: usize) -> f64 {
    (0..d.len()).map(|k| d.get(k, a).min(d.get(k, b))).sum()
}

/// Point `k` goes to the nearer medoid, the lower-index medoid on ties.
fn assign(d: &DistanceMatrix, a: usize, b: usize) -> Vec<u8> {
    let (lo, hi) = (a.min(b), a.max(b));
    (0..d.len())
        .map(|k| {
            let (dl, dh) = (d.get(k, lo), d.get(k, hi));
            let to_lo = dl < dh || (dl == dh && k != hi);
            if (to_lo && lo == a) || (!to_lo && hi == a) {
                0
            } else {
                1
            }
        })
        .collect()
}

fn cluster_medoid(d: &DistanceMatrix, members: &[usize]) -> usize {
    let mut best = members[0];
    let mut best_sum = f64::INFINITY;
    for &i in members {
        let s: f64 = members.iter().map(|&k| d.get(i, k)).sum();
        if s < best_sum {
            best_sum = s;
            best = i;
        }
    }
    best
}

/// Largest point count solved by exhaustive pair search.
pub const EXACT_LIMIT: usize = 256;

/// Requires at least two points.
pub fn two_medoids(d: &DistanceMatrix, max_iter: usize) -> TwoMedoids {
    if d.len() <= EXACT_LIMIT {
        two_medoids_exact(d)
    } else {
        two_medoids_local(d, max_iter)
    }
}

/// Relative cost difference below which two medoid pairs tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Lowest-cost medoid pair; the lexicographically first pair on ties,
/// costs within [`TIE_TOLERANCE`] counting as tied.
pub fn two_medoids_exact(d: &DistanceMatrix) -> TwoMedoids {
    let n = d.len();
    assert!(n >= 2, "two medoids need two points");
    let (mut a, mut b) = (0, 1);
    let mut cost = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let c = cost_of(d, i, j);
            if cost.is_infinite() || c < cost - TIE_TOLERANCE * cost.abs() {
                cost = c;
                a = i;
                b = j;
            }
        }
    }
    TwoMedoids {
        medoids: (a, b),
        assignment: assign(d, a, b),
        cost,
        iterations: 0,
    }
}

/// Voronoi iteration plus swap refinement; a local optimum.
pub fn two_medoids_local(d: &DistanceMatrix, max_iter: usize) -> TwoMedoids {
    let n = d.len();
    assert!(n >= 2, "two medoids need two points");

    let (mut a, mut b) = (0, 1);
    for i in 0..n {
        for j in (i + 1)..n {
            if d.get(i, j) > d.get(a, b) {
                a = i;
                b = j;
            }
        }
    }

    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let assignment = assign(d, a, b);
        let members = |c: u8| -> Vec<usize> { (0..n).filter(|&k| assignment[k] == c).collect() };
        let na = cluster_medoid(d, &members(0));
        let nb = cluster_medoid(d, &members(1));
        if (na, nb) == (a, b) || na == nb {
            break;
        }
        a = na;
        b = nb;
    }

    let mut cost = cost_of(d, a, b);
    loop {
        let mut best = (cost, a, b);
        for c in 0..n {
            if c == a || c == b {
                continue;
            }
            for (keep, _) in [(b, a), (a, b)] {
                let trial = cost_of(d, keep, c);
                if trial < best.0 {
                    best = (trial, keep, c);
                }
            }
        }
        if best.0 < cost - 1e-12 * cost.abs() {
            cost = best.0;
            a = best.1;
            b = best.2;
        } else {
            break;
        }
    }

    let (lo, hi) = (a.min(b), a.max(b));
    TwoMedoids {
        medoids: (lo, hi),
        assignment: assign(d, lo, hi),
        cost,
        iterations,
    }
}
