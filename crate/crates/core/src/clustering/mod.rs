//! Pseudo-label generation: embedding preprocessing, K-means, Power Iteration
//! Clustering and the NMI agreement score between successive assignments.

mod kmeans;
mod nmi;
mod pic;
mod preprocess;

pub use kmeans::{kmeans_fit, objective, KMeans, KMeansFit};
pub use nmi::nmi;
pub use pic::{pic_fit, pic_labels, power_iterate, Affinity, PicParams, PowerIteration};
pub use preprocess::{l2_normalize_rows, preprocess, ReducedEmbeddings};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    KMeans,
    Pic,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::Pic => "pic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// c × d centroid matrix.
    pub centroids: Array2<f64>,
    pub algorithm: Algorithm,
    pub num_clusters: usize,
    /// Mean squared distance of points to their centroid.
    pub inertia: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabelAssignment {
    pub labels: Vec<u32>,
    pub epoch: usize,
    pub cluster_sizes: Vec<usize>,
}

impl PseudoLabelAssignment {
    pub fn from_labels(labels: Vec<u32>, num_clusters: usize, epoch: usize) -> Result<Self> {
        let mut sizes = vec![0usize; num_clusters];
        for &l in &labels {
            *sizes.get_mut(l as usize).ok_or_else(|| {
                Error::InvalidArgument(format!("label {l} >= {num_clusters} clusters"))
            })? += 1;
        }
        Ok(Self {
            labels,
            epoch,
            cluster_sizes: sizes,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Clustering settings shared by pretraining and the `cluster` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub algorithm: Algorithm,
    pub num_clusters: usize,
    /// Target PCA dimension before whitening.
    pub pca_dim: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    pub pic: PicParams,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Pic,
            num_clusters: 512,
            pca_dim: 128,
            kmeans_max_iter: 100,
            kmeans_restarts: 1,
            pic: PicParams::default(),
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        if self.num_clusters < 2 {
            return Err(Error::config(format!("{section}.num_clusters"), "must be >= 2"));
        }
        if self.pca_dim == 0 {
            return Err(Error::config(format!("{section}.pca_dim"), "must be positive"));
        }
        if self.kmeans_max_iter == 0 || self.kmeans_restarts == 0 {
            return Err(Error::config(
                format!("{section}.kmeans_max_iter"),
                "iterations and restarts must be positive",
            ));
        }
        if self.pic.neighbors == 0 {
            return Err(Error::config(format!("{section}.pic.neighbors"), "must be positive"));
        }
        Ok(())
    }
}

/// Reduces raw embeddings and clusters them with the configured algorithm.
///
/// Embeddings with no variance at all cannot be whitened; they are clustered
/// as all-zero points instead, which K-means splits deterministically.
pub fn cluster_embeddings(
    z: ArrayView2<f64>,
    config: &ClusteringConfig,
    seed: u64,
) -> Result<(ClusterModel, PseudoLabelAssignment)> {
    let reduced = match preprocess(z, config.pca_dim) {
        Ok(r) => r,
        Err(Error::DegenerateEmbeddings(_)) => {
            ReducedEmbeddings::from_points(Array2::zeros((z.nrows(), 1)))
        }
        Err(e) => return Err(e),
    };
    cluster_reduced(&reduced, config, seed)
}

pub fn cluster_reduced(
    reduced: &ReducedEmbeddings,
    config: &ClusteringConfig,
    seed: u64,
) -> Result<(ClusterModel, PseudoLabelAssignment)> {
    match config.algorithm {
        Algorithm::KMeans => {
            let fit = KMeans::new(config.num_clusters, seed)
                .with_max_iter(config.kmeans_max_iter)
                .with_restarts(config.kmeans_restarts)
                .fit(reduced.values.view())?;
            Ok((fit.model, fit.assignment))
        }
        Algorithm::Pic => pic_fit(reduced, config.num_clusters, &config.pic, seed),
    }
}
