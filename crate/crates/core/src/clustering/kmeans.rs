//! Lloyd's k-means with k-means++ seeding and empty-cluster repair.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Algorithm, ClusterModel, PseudoLabelAssignment};
use crate::error::{Error, Result};
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub num_clusters: usize,
    pub max_iter: usize,
    /// Independent k-means++ initializations; the lowest objective wins.
    pub restarts: usize,
    pub seed: u64,
}

/// Result of one k-means fit.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub assignment: PseudoLabelAssignment,
    /// Objective after every Lloyd iteration of the winning restart.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Mean squared distance of each point to its assigned centroid.
pub fn objective(x: ArrayView2<f64>, centroids: &Array2<f64>, labels: &[u32]) -> f64 {
    let total: f64 = x
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &l)| sq_dist(row, centroids.row(l as usize)))
        .sum();
    total / x.nrows() as f64
}

fn kmeans_pp(x: ArrayView2<f64>, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((c, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for j in 1..c {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).assign(&x.row(pick));
        for (i, row) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(row, x.row(pick)));
        }
    }
    centroids
}

fn cluster_sizes(labels: &[u32], c: usize) -> Vec<usize> {
    let mut sizes = vec![0; c];
    for &l in labels {
        sizes[l as usize] += 1;
    }
    sizes
}

/// Refills every empty cluster from the currently largest one.
///
/// The donor's two mutually farthest members are found; the one farther from
/// the donor centroid seeds the empty cluster, and donor members strictly
/// closer to that seed than to the donor centroid move with it. Every moved
/// point gets closer to its centroid, so the objective cannot increase.
fn repair_empty(x: ArrayView2<f64>, centroids: &mut Array2<f64>, labels: &mut [u32]) -> usize {
    let c = centroids.nrows();
    let mut repaired = 0;
    loop {
        let sizes = cluster_sizes(labels, c);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return repaired;
        };
        let donor = (0..c).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
        let members: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] as usize == donor)
            .collect();
        debug_assert!(members.len() >= 2, "an empty cluster implies a donor with two members");
        let mut pair = (members[0], members[1], -1.0);
        for (a_pos, &a) in members.iter().enumerate() {
            for &b in &members[a_pos + 1..] {
                let d = sq_dist(x.row(a), x.row(b));
                if d > pair.2 {
                    pair = (a, b, d);
                }
            }
        }
        let (a, b, _) = pair;
        let donor_centroid = centroids.row(donor).to_owned();
        let seed = if sq_dist(x.row(b), donor_centroid.view())
            > sq_dist(x.row(a), donor_centroid.view())
        {
            b
        } else {
            a
        };
        let seed_point = x.row(seed).to_owned();
        centroids.row_mut(empty).assign(&seed_point);
        labels[seed] = empty as u32;
        for &i in &members {
            if i != seed
                && sq_dist(x.row(i), seed_point.view()) < sq_dist(x.row(i), donor_centroid.view())
            {
                labels[i] = empty as u32;
            }
        }
        repaired += 1;
    }
}

fn update_centroids(x: ArrayView2<f64>, labels: &[u32], centroids: &mut Array2<f64>) {
    let c = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; c];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        let mut s = sums.row_mut(l as usize);
        s += &row;
        counts[l as usize] += 1;
    }
    for j in 0..c {
        if counts[j] > 0 {
            let mean = &sums.row(j) / counts[j] as f64;
            centroids.row_mut(j).assign(&mean);
        }
    }
}

struct Run {
    centroids: Array2<f64>,
    labels: Vec<u32>,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn lloyd(x: ArrayView2<f64>, c: usize, max_iter: usize, seed: u64) -> Run {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(x, c, &mut rng);
    let mut labels: Vec<u32> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let mut next: Vec<u32> = x
            .rows()
            .into_iter()
            .map(|r| nearest(r, &centroids).0 as u32)
            .collect();
        repair_empty(x, &mut centroids, &mut next);
        update_centroids(x, &next, &mut centroids);
        history.push(objective(x, &centroids, &next));
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    Run {
        centroids,
        labels,
        history,
        iterations,
        converged,
    }
}

impl KMeans {
    pub fn new(num_clusters: usize, seed: u64) -> Self {
        Self {
            num_clusters,
            max_iter: 100,
            restarts: 1,
            seed,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn fit(&self, x: ArrayView2<f64>) -> Result<KMeansFit> {
        let n = x.nrows();
        let c = self.num_clusters;
        if c == 0 || c > n {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= clusters <= points, got {c} clusters for {n} points"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("k-means input".into()));
        }
        let best = (0..self.restarts.max(1) as u64)
            .map(|r| lloyd(x, c, self.max_iter, mix_seed(self.seed, &[r])))
            .reduce(|best, run| {
                if run.history.last() < best.history.last() {
                    run
                } else {
                    best
                }
            })
            .expect("at least one restart");
        let inertia = *best.history.last().expect("at least one iteration");
        let sizes = cluster_sizes(&best.labels, c);
        Ok(KMeansFit {
            model: ClusterModel {
                centroids: best.centroids,
                algorithm: Algorithm::KMeans,
                num_clusters: c,
                inertia,
                seed: self.seed,
            },
            assignment: PseudoLabelAssignment {
                labels: best.labels,
                epoch: 0,
                cluster_sizes: sizes,
            },
            objective_history: best.history,
            iterations: best.iterations,
            converged: best.converged,
        })
    }
}

/// Single-restart k-means: `(model, assignment)`.
pub fn kmeans_fit(
    x: ArrayView2<f64>,
    c: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(ClusterModel, PseudoLabelAssignment)> {
    let fit = KMeans::new(c, seed).with_max_iter(max_iter).fit(x)?;
    Ok((fit.model, fit.assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per: usize, sigma: f64, seed: u64) -> (Array2<f64>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut x = Array2::zeros((2 * n_per, 2));
        let mut truth = Vec::new();
        for i in 0..2 * n_per {
            let center = if i < n_per { 5.0 } else { -5.0 };
            x[[i, 0]] = center + noise.sample(&mut rng);
            x[[i, 1]] = center + noise.sample(&mut rng);
            truth.push(u32::from(i >= n_per));
        }
        (x, truth)
    }

    #[test]
    fn one_centroid_per_distinct_point() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [2.0, 2.0]];
        let (model, a) = kmeans_fit(x.view(), 4, 1, 50).unwrap();
        assert_eq!(model.inertia, 0.0);
        assert!(a.cluster_sizes.iter().all(|&s| s == 1));
    }

    #[test]
    fn separated_blobs_recover_the_planted_partition() {
        let (x, truth) = blobs(4, 0.1, 7);
        let (_, a) = kmeans_fit(x.view(), 2, 3, 100).unwrap();
        let flip = a.labels[0] != truth[0];
        for (l, t) in a.labels.iter().zip(&truth) {
            assert_eq!((*l != *t), flip);
        }
    }

    #[test]
    fn identical_points_terminate_with_a_singleton() {
        let x = Array2::from_elem((10, 3), 1.5);
        let fit = KMeans::new(2, 0).with_max_iter(1000).fit(x.view()).unwrap();
        let mut sizes = fit.assignment.cluster_sizes.clone();
        sizes.sort();
        assert_eq!(sizes, vec![1, 9]);
        assert!(fit.converged);
        assert!(fit.iterations < 10);
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((60, 3), |_| rng.random::<f64>());
            let fit = KMeans::new(6, seed).fit(x.view()).unwrap();
            for w in fit.objective_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9), "{w:?}");
            }
        }
    }

    #[test]
    fn labels_are_nearest_centroids_when_converged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((80, 4), |_| rng.random::<f64>());
        let fit = KMeans::new(5, 2).with_max_iter(500).fit(x.view()).unwrap();
        assert!(fit.converged);
        for (row, &l) in x.rows().into_iter().zip(&fit.assignment.labels) {
            let (_, best) = nearest(row, &fit.model.centroids);
            let own = sq_dist(row, fit.model.centroids.row(l as usize));
            assert!(own <= best + 1e-12);
        }
    }

    #[test]
    fn rejects_more_clusters_than_points() {
        let x = Array2::<f64>::zeros((3, 2));
        assert!(kmeans_fit(x.view(), 4, 0, 10).is_err());
    }

    #[test]
    fn rejects_non_finite_input() {
        let x = array![[0.0], [f64::NAN], [1.0]];
        assert!(matches!(kmeans_fit(x.view(), 2, 0, 10), Err(Error::NonFinite(_))));
    }

    #[test]
    fn repair_keeps_every_cluster_populated() {
        // Two tight duplicates groups but four clusters requested.
        let x = array![[0.0], [0.0], [0.0], [10.0], [10.0], [10.0]];
        let fit = KMeans::new(4, 9).fit(x.view()).unwrap();
        assert!(fit.assignment.cluster_sizes.iter().all(|&s| s >= 1));
        assert_eq!(fit.assignment.cluster_sizes.iter().sum::<usize>(), 6);
    }
}
