//! Lloyd's k-means over drone positions with k-means++ seeding and restarts.

use rand::Rng;

use super::{Fleet, FleetError, Position};
use crate::seed;

/// Independent k-means++ initialisations tried per call; the lowest
/// objective wins.
pub const KMEANS_RESTARTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster label per drone, in drone order. Labels are numbered in order
    /// of first appearance, so drone 0 is always in cluster 0.
    pub labels: Vec<usize>,
    pub centroids: Vec<Position>,
    /// Within-cluster sum of squared distances.
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

type Point = [f64; 3];

fn sq_dist(a: &Point, b: &Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Within-cluster sum of squared distances of a labelling, with centroids
/// taken as the cluster means.
pub fn within_cluster_sse(points: &[Position], labels: &[usize], k: usize) -> f64 {
    let pts: Vec<Point> = points.iter().map(|p| p.to_array()).collect();
    let centroids = means(&pts, labels, k).into_iter().map(|c| c.unwrap_or([0.0; 3])).collect::<Vec<_>>();
    objective(&pts, labels, &centroids)
}

fn objective(points: &[Point], labels: &[usize], centroids: &[Point]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

fn means(points: &[Point], labels: &[usize], k: usize) -> Vec<Option<Point>> {
    let mut sums = vec![[0.0; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        for i in 0..3 {
            sums[l][i] += p[i];
        }
        counts[l] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.map(|v| v / c as f64)))
        .collect()
}

fn nearest(p: &Point, centroids: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Nearest centroid, keeping the current label when it is among the closest.
fn reassign(p: &Point, current: usize, centroids: &[Point]) -> usize {
    let best = nearest(p, centroids);
    if sq_dist(p, &centroids[current]) <= sq_dist(p, &centroids[best]) {
        current
    } else {
        best
    }
}

fn plus_plus_init(points: &[Point], k: usize, rng: &mut impl Rng) -> Vec<Point> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick]);
    }
    centroids
}

/// Moves the point farthest from its own centroid into each empty cluster.
fn repair_empty(points: &[Point], labels: &mut [usize], centroids: &mut [Point]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let donor = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&points[a], &centroids[labels[a]]);
                let db = sq_dist(&points[b], &centroids[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= n guarantees a cluster with more than one point");
        labels[donor] = empty;
        centroids[empty] = points[donor];
        for (c, m) in centroids.iter_mut().zip(means(points, labels, k)) {
            if let Some(m) = m {
                *c = m;
            }
        }
    }
}

/// Single-point moves that lower the objective once the centroids follow the
/// move (Hartigan's rule). Lloyd's fixed points can still be improved this
/// way; every accepted move strictly lowers the objective.
fn hartigan_refine(points: &[Point], labels: &mut [usize], centroids: &mut [Point], history: &mut Vec<f64>) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    for (c, m) in centroids.iter_mut().zip(means(points, labels, k)) {
        if let Some(m) = m {
            *c = m;
        }
    }
    loop {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = labels[i];
            let na = counts[from] as f64;
            if counts[from] < 2 {
                continue;
            }
            let removal_gain = na / (na - 1.0) * sq_dist(p, &centroids[from]);
            let best = (0..k)
                .filter(|&to| to != from)
                .map(|to| {
                    let nb = counts[to] as f64;
                    (to, nb / (nb + 1.0) * sq_dist(p, &centroids[to]))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let Some((to, cost)) = best else { continue };
            if cost < removal_gain * (1.0 - 1e-12) {
                let (na, nb) = (na, counts[to] as f64);
                for d in 0..3 {
                    centroids[from][d] = (centroids[from][d] * na - p[d]) / (na - 1.0);
                    centroids[to][d] = (centroids[to][d] * nb + p[d]) / (nb + 1.0);
                }
                counts[from] -= 1;
                counts[to] += 1;
                labels[i] = to;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        // recompute exactly to avoid drift from the incremental updates
        for (c, m) in centroids.iter_mut().zip(means(points, labels, k)) {
            if let Some(m) = m {
                *c = m;
            }
        }
        history.push(objective(points, labels, centroids));
    }
}

struct LloydRun {
    labels: Vec<usize>,
    centroids: Vec<Point>,
    objective: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn lloyd(points: &[Point], mut centroids: Vec<Point>, max_iters: usize) -> LloydRun {
    let k = centroids.len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        for (c, m) in centroids.iter_mut().zip(means(points, &labels, k)) {
            if let Some(m) = m {
                *c = m;
            }
        }
        repair_empty(points, &mut labels, &mut centroids);
        history.push(objective(points, &labels, &centroids));
        let next: Vec<usize> = points.iter().zip(&labels).map(|(p, &l)| reassign(p, l, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    // max_iters may stop right after a reassignment that emptied a cluster
    repair_empty(points, &mut labels, &mut centroids);
    hartigan_refine(points, &mut labels, &mut centroids, &mut history);
    let objective = objective(points, &labels, &centroids);
    LloydRun { labels, centroids, objective, iterations, history }
}

/// Splits the fleet into `k` clusters by drone position.
pub fn kmeans_cluster(fleet: &Fleet, k: usize, max_iters: usize, seed: u64) -> Result<KMeansResult, FleetError> {
    let n = fleet.len();
    if k == 0 || k > n {
        return Err(FleetError::InvalidClustering(format!("k must be in 1..={n}, got {k}")));
    }
    if max_iters == 0 {
        return Err(FleetError::InvalidClustering("max_iters must be >= 1".into()));
    }
    let points: Vec<Point> = fleet.drones.iter().map(|d| d.position.to_array()).collect();

    let mut best: Option<LloydRun> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = seed::rng(seed::derive_seed(seed, "kmeans", restart as u64));
        let init = plus_plus_init(&points, k, &mut rng);
        let run = lloyd(&points, init, max_iters);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");

    // Relabel by first appearance so results do not depend on init order.
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &best.labels {
        if remap[l] == usize::MAX {
            remap[l] = next;
            next += 1;
        }
    }
    let labels = best.labels.iter().map(|&l| remap[l]).collect();
    let mut centroids = vec![Position::new(0.0, 0.0, 0.0); k];
    for (old, c) in best.centroids.iter().enumerate() {
        centroids[remap[old]] = Position::from_array(*c);
    }
    Ok(KMeansResult {
        labels,
        centroids,
        objective: best.objective,
        iterations: best.iterations,
        history: best.history,
    })
}
