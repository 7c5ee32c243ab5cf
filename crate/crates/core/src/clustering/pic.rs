//! Power Iteration Clustering over a sparse cosine k-nearest-neighbour graph.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::{objective, KMeans};
use super::{Algorithm, ClusterModel, PseudoLabelAssignment, ReducedEmbeddings};
use crate::error::{Error, Result};
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicParams {
    /// Neighbours kept per row before symmetrization.
    pub neighbors: usize,
    pub max_iter: usize,
    /// Acceleration threshold; `None` uses `1e-9 / N`.
    pub epsilon: Option<f64>,
    /// Self-loop weight given to vertices with no edges.
    pub isolated_self_loop: f64,
    /// Restarts of the one-dimensional k-means on the final iterate.
    pub restarts: usize,
}

impl Default for PicParams {
    fn default() -> Self {
        Self {
            neighbors: 10,
            max_iter: 10_000,
            epsilon: None,
            isolated_self_loop: 1e-3,
            restarts: 10,
        }
    }
}

/// Symmetric non-negative sparse affinity matrix, one sorted adjacency list per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Affinity {
    /// Builds from undirected weighted edges; duplicate edges keep the larger weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("edge ({i},{j}) out of range")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("edge weight {w}")));
            }
            for (a, b) in [(i, j), (j, i)] {
                let e = rows[a].entry(b).or_insert(0.0);
                *e = e.max(w);
            }
        }
        Ok(Self {
            rows: rows.into_iter().map(|r| r.into_iter().collect()).collect(),
        })
    }

    /// Cosine similarity graph: negatives clipped, top-`m` neighbours per row
    /// (self excluded, ties to the lower index), symmetrized by max.
    pub fn cosine_knn(x: ArrayView2<f64>, m: usize) -> Self {
        let n = x.nrows();
        let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut edges = Vec::with_capacity(n * m);
        let mut sims = Vec::with_capacity(n);
        for i in 0..n {
            sims.clear();
            if norms[i] > 0.0 {
                for j in 0..n {
                    if j == i || norms[j] == 0.0 {
                        continue;
                    }
                    let s = x.row(i).dot(&x.row(j)) / (norms[i] * norms[j]);
                    if s > 0.0 {
                        sims.push((j, s));
                    }
                }
            }
            sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            edges.extend(sims.iter().take(m).map(|&(j, s)| (i, j, s)));
        }
        Self::from_edges(n, &edges).expect("indices and weights are valid")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&(j, w)| (j, w * factor)).collect())
                .collect(),
        }
    }

    /// Adds a self-loop of weight `w` to every vertex without edges; returns how many.
    pub fn repair_isolated(&mut self, w: f64) -> usize {
        let mut count = 0;
        for (i, row) in self.rows.iter_mut().enumerate() {
            if row.iter().all(|&(_, v)| v == 0.0) {
                row.clear();
                row.push((i, w));
                count += 1;
            }
        }
        count
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(_, w)| w).sum()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PowerIteration {
    /// Final iterate, l1-normalized.
    pub vector: Vec<f64>,
    pub iterations: usize,
    /// Whether the acceleration criterion fired before `max_iter`.
    pub converged: bool,
}

/// Runs `v <- D^-1 A v / ||D^-1 A v||_1` until the largest change in the
/// per-entry velocity `|v_t - v_{t-1}|` drops to `epsilon`.
///
/// The start vector is the degree vector with a seeded multiplicative jitter
/// in `[1, 2)`; a pure degree start cannot tell apart disconnected components
/// of equal degree.
pub fn power_iterate(
    affinity: &Affinity,
    epsilon: f64,
    max_iter: usize,
    seed: u64,
) -> PowerIteration {
    let n = affinity.len();
    let degrees = affinity.degrees();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = degrees
        .iter()
        .map(|&d| d * (1.0 + rng.random::<f64>()))
        .collect();
    l1_normalize(&mut v);
    let mut next = vec![0.0; n];
    let mut velocity: Option<Vec<f64>> = None;
    for it in 1..=max_iter {
        for (i, out) in next.iter_mut().enumerate() {
            let s: f64 = affinity.row(i).iter().map(|&(j, w)| w * v[j]).sum();
            *out = if degrees[i] > 0.0 { s / degrees[i] } else { 0.0 };
        }
        l1_normalize(&mut next);
        let vel: Vec<f64> = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).collect();
        std::mem::swap(&mut v, &mut next);
        if let Some(prev) = &velocity {
            let accel = vel
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if accel <= epsilon {
                return PowerIteration {
                    vector: v,
                    iterations: it,
                    converged: true,
                };
            }
        }
        velocity = Some(vel);
    }
    PowerIteration {
        vector: v,
        iterations: max_iter,
        converged: false,
    }
}

fn l1_normalize(v: &mut [f64]) {
    let s: f64 = v.iter().map(|x| x.abs()).sum();
    if s > 0.0 {
        for x in v.iter_mut() {
            *x /= s;
        }
    }
}

/// Labels from PIC on an explicit affinity graph.
pub fn pic_labels(
    affinity: &Affinity,
    c: usize,
    params: &PicParams,
    seed: u64,
) -> Result<(Vec<u32>, PowerIteration)> {
    let n = affinity.len();
    if c == 0 || c > n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= clusters <= points, got {c} clusters for {n} points"
        )));
    }
    let mut graph = affinity.clone();
    graph.repair_isolated(params.isolated_self_loop);
    let eps = params.epsilon.unwrap_or(1e-9 / n as f64);
    let pi = power_iterate(&graph, eps, params.max_iter, mix_seed(seed, &[0]));
    // The iterate lives on the scale 1/N; rescale so k-means sees O(1) values.
    let peak = pi.vector.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let line = Array2::from_shape_fn((n, 1), |(i, _)| pi.vector[i] * scale);
    let fit = KMeans::new(c, mix_seed(seed, &[1]))
        .with_max_iter(300)
        .with_restarts(params.restarts)
        .fit(line.view())?;
    Ok((fit.assignment.labels, pi))
}

pub fn pic_fit(
    x: &ReducedEmbeddings,
    c: usize,
    params: &PicParams,
    seed: u64,
) -> Result<(ClusterModel, PseudoLabelAssignment)> {
    if x.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PIC input".into()));
    }
    let affinity = Affinity::cosine_knn(x.values.view(), params.neighbors);
    let (labels, _) = pic_labels(&affinity, c, params, seed)?;
    let d = x.dim();
    let mut centroids = Array2::<f64>::zeros((c, d));
    let mut sizes = vec![0usize; c];
    for (row, &l) in x.values.rows().into_iter().zip(&labels) {
        let mut cr = centroids.row_mut(l as usize);
        cr += &row;
        sizes[l as usize] += 1;
    }
    for (mut row, &s) in centroids.rows_mut().into_iter().zip(&sizes) {
        if s > 0 {
            row /= s as f64;
        }
    }
    let inertia = objective(x.values.view(), &centroids, &labels);
    Ok((
        ClusterModel {
            centroids,
            algorithm: Algorithm::Pic,
            num_clusters: c,
            inertia,
            seed,
        },
        PseudoLabelAssignment {
            labels,
            epoch: 0,
            cluster_sizes: sizes,
        },
    ))
}
