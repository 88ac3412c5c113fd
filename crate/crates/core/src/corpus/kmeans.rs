//! Lloyd's k-means with k-means++ seeding, plus the weight-constrained
//! variant used to assign protein clusters to folds.

#![allow(clippy::needless_range_loop)]

use super::CorpusError;
use crate::linalg::Mat;
use crate::rng::Rng;

const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Mat,
    pub inertia: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centroid uniform, then D^2-weighted sampling.
fn plus_plus_seed(points: &Mat, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = points.rows;
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a centroid; pick the first
            // not yet chosen for determinism.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        } else {
            let mut target = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        chosen.push(next);
        for i in 0..n {
            let d = squared_distance(points.row(i), points.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

/// Lloyd's algorithm: converged when assignments are stable or after 300
/// iterations; empty clusters are reseeded to the farthest point.
pub fn kmeans_cluster(points: &Mat, k: usize, seed: u64) -> Result<KMeansResult, CorpusError> {
    let n = points.rows;
    if k == 0 || k > n {
        return Err(CorpusError::TooManyClusters { k, n });
    }
    let d = points.cols;
    let mut rng = Rng::seed_from(seed);
    let seeds = plus_plus_seed(points, k, &mut rng);
    let mut centroids = Mat::zeros(k, d);
    for (c, &i) in seeds.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(points.row(i));
    }

    let mut labels = vec![0usize; n];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for i in 0..n {
            let mut best = (f64::INFINITY, 0usize);
            for c in 0..k {
                let dist = squared_distance(points.row(i), centroids.row(c));
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        // Recompute centroids; reseed empties to the farthest point.
        let mut counts = vec![0usize; k];
        let mut sums = Mat::zeros(k, d);
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = (0..n)
                    .max_by(|&a, &b| {
                        squared_distance(points.row(a), centroids.row(labels[a]))
                            .total_cmp(&squared_distance(points.row(b), centroids.row(labels[b])))
                    })
                    .expect("non-empty points");
                centroids.row_mut(c).copy_from_slice(points.row(farthest));
                labels[farthest] = c;
                changed = true;
            } else {
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let inertia = (0..n)
        .map(|i| squared_distance(points.row(i), centroids.row(labels[i])))
        .sum();
    Ok(KMeansResult {
        labels,
        centroids,
        inertia,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedGrouping {
    pub group_of: Vec<usize>,
    /// True when the capacity-respecting assignment failed and the greedy
    /// largest-first balancing was used instead.
    pub fallback: bool,
}

fn group_weights(group_of: &[usize], weights: &[f64], k: usize) -> Vec<f64> {
    let mut w = vec![0.0; k];
    for (i, &g) in group_of.iter().enumerate() {
        w[g] += weights[i];
    }
    w
}

fn within_bounds(group_of: &[usize], weights: &[f64], k: usize, max_dev: f64) -> bool {
    let total: f64 = weights.iter().sum();
    let mean = total / k as f64;
    group_weights(group_of, weights, k)
        .iter()
        .all(|&w| (w - mean).abs() <= max_dev * mean + 1e-9)
}

/// Greedy largest-first balancing (ignores geometry): each item goes to the
/// currently lightest group.
fn largest_first(weights: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut group_of = vec![0usize; weights.len()];
    let mut loads = vec![0.0f64; k];
    for &i in &order {
        let lightest = (0..k)
            .min_by(|&a, &b| loads[a].total_cmp(&loads[b]))
            .expect("k > 0");
        group_of[i] = lightest;
        loads[lightest] += weights[i];
    }
    group_of
}

/// Group weighted points into k groups whose total weights stay within
/// `max_dev` of the mean, preferring geometric coherence (k-means over the
/// points with capacity-capped assignment). Falls back to greedy
/// largest-first balancing when the constrained rounds do not converge to a
/// feasible assignment.
pub fn constrained_group(
    points: &Mat,
    weights: &[f64],
    k: usize,
    max_dev: f64,
    seed: u64,
) -> ConstrainedGrouping {
    let n = points.rows;
    assert_eq!(n, weights.len());
    assert!(k >= 1 && k <= n);
    let total: f64 = weights.iter().sum();
    let cap = (total / k as f64) * (1.0 + max_dev);

    let mut rng = Rng::seed_from(seed ^ 0x5eed_c0de);
    let seeds = plus_plus_seed(points, k, &mut rng);
    let d = points.cols;
    let mut centroids = Mat::zeros(k, d);
    for (c, &i) in seeds.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(points.row(i));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));

    let mut group_of = vec![0usize; n];
    for _ in 0..60 {
        // Heaviest first, nearest group with remaining capacity; if none
        // fits, the lightest group takes it.
        let mut loads = vec![0.0f64; k];
        let mut next = vec![0usize; n];
        for &i in &order {
            let mut ranked: Vec<usize> = (0..k).collect();
            ranked.sort_by(|&a, &b| {
                squared_distance(points.row(i), centroids.row(a))
                    .total_cmp(&squared_distance(points.row(i), centroids.row(b)))
            });
            let fit = ranked
                .iter()
                .copied()
                .find(|&g| loads[g] + weights[i] <= cap);
            let g = fit.unwrap_or_else(|| {
                (0..k)
                    .min_by(|&a, &b| loads[a].total_cmp(&loads[b]))
                    .expect("k > 0")
            });
            next[i] = g;
            loads[g] += weights[i];
        }
        let stable = next == group_of;
        group_of = next;
        // Weighted centroid update.
        let mut sums = Mat::zeros(k, d);
        let mut mass = vec![0.0f64; k];
        for i in 0..n {
            mass[group_of[i]] += weights[i].max(1e-12);
            for (s, v) in sums.row_mut(group_of[i]).iter_mut().zip(points.row(i)) {
                *s += v * weights[i].max(1e-12);
            }
        }
        for c in 0..k {
            if mass[c] > 0.0 {
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / mass[c];
                }
            }
        }
        if stable {
            break;
        }
    }

    // Bound repair: local moves that reduce total bound violation, breaking
    // ties toward geometric closeness.
    repair_bounds(points, weights, k, max_dev, &centroids, &mut group_of);

    if within_bounds(&group_of, weights, k, max_dev) {
        return ConstrainedGrouping {
            group_of,
            fallback: false,
        };
    }
    let lpt = largest_first(weights, k);
    ConstrainedGrouping {
        group_of: lpt,
        fallback: true,
    }
}

/// Total violation of the [lo, hi] band across groups.
fn bound_violation(loads: &[f64], lo: f64, hi: f64) -> f64 {
    loads
        .iter()
        .map(|&w| (lo - w).max(0.0) + (w - hi).max(0.0))
        .sum()
}

/// Greedy local search: repeatedly move the single item that best reduces
/// the bound violation until the bands hold or no move helps.
fn repair_bounds(
    points: &Mat,
    weights: &[f64],
    k: usize,
    max_dev: f64,
    centroids: &Mat,
    group_of: &mut [usize],
) {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mean = total / k as f64;
    let lo = mean * (1.0 - max_dev);
    let hi = mean * (1.0 + max_dev);
    for _ in 0..4 * n {
        let loads = group_weights(group_of, weights, k);
        let current = bound_violation(&loads, lo, hi);
        if current <= 1e-9 {
            break;
        }
        let mut best: Option<(f64, f64, usize, usize)> = None; // (violation, dist, item, dst)
        for i in 0..n {
            let src = group_of[i];
            for dst in 0..k {
                if dst == src {
                    continue;
                }
                let mut after = loads.clone();
                after[src] -= weights[i];
                after[dst] += weights[i];
                let violation = bound_violation(&after, lo, hi);
                if violation >= current - 1e-12 {
                    continue;
                }
                let dist = squared_distance(points.row(i), centroids.row(dst));
                let candidate = (violation, dist, i, dst);
                let better = match best {
                    None => true,
                    Some((bv, bd, _, _)) => {
                        violation < bv - 1e-12 || (violation <= bv + 1e-12 && dist < bd)
                    }
                };
                if better {
                    best = Some(candidate);
                }
            }
        }
        match best {
            Some((_, _, item, dst)) => group_of[item] = dst,
            None => break,
        }
    }
}
