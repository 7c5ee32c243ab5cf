//! PCA reduction, whitening and row l2-normalization of embedding matrices.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Singular values below `RANK_TOL * s_max` are treated as zero.
const RANK_TOL: f64 = 1e-9;

/// Reduced, whitened and l2-normalized embeddings together with the fitted
/// transform.
#[derive(Debug, Clone)]
pub struct ReducedEmbeddings {
    /// N × d rows of unit norm (all-zero rows stay zero).
    pub values: Array2<f64>,
    /// n_in × d principal directions.
    pub projection: Array2<f64>,
    pub mean: Array1<f64>,
    /// Per-component inverse standard deviations.
    pub whitener: Array1<f64>,
}

impl ReducedEmbeddings {
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Centers, projects and whitens `z` with the fitted transform; no l2 step.
    pub fn whiten(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let centered = &z - &self.mean.view().insert_axis(Axis(0));
        let mut out = centered.dot(&self.projection);
        out *= &self.whitener.view().insert_axis(Axis(0));
        out
    }

    /// Full transform, matching how `values` was produced.
    pub fn transform(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let mut out = self.whiten(z);
        l2_normalize_rows(&mut out);
        out
    }

    /// Wraps already-reduced points (no fitted transform) for direct clustering.
    pub fn from_points(values: Array2<f64>) -> Self {
        let d = values.ncols();
        Self {
            values,
            projection: Array2::eye(d),
            mean: Array1::zeros(d),
            whitener: Array1::ones(d),
        }
    }
}

pub fn l2_normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// Fits PCA to `z` (N × n_in) and returns the reduced embeddings.
///
/// `d` is clamped to `min(N - 1, n_in)` and to the numerical rank of the
/// centered data. Component signs are fixed so that the largest-magnitude
/// entry of each principal direction is positive.
pub fn preprocess(z: ArrayView2<f64>, d: usize) -> Result<ReducedEmbeddings> {
    let (n, n_in) = z.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 embeddings, got {n}"
        )));
    }
    if n_in == 0 || d == 0 {
        return Err(Error::InvalidArgument("zero embedding dimension".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding matrix".into()));
    }
    let mean = z.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &z - &mean.view().insert_axis(Axis(0));

    let mat = DMatrix::from_fn(n, n_in, |i, j| centered[[i, j]]);
    let svd = mat.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let s_max = svd.singular_values[order[0]];
    if !(s_max > 0.0) {
        return Err(Error::DegenerateEmbeddings(
            "all embeddings are identical".into(),
        ));
    }
    let rank = order
        .iter()
        .take_while(|&&i| svd.singular_values[i] > RANK_TOL * s_max)
        .count();
    let d = d.min(n - 1).min(n_in).min(rank);

    let scale = ((n - 1) as f64).sqrt();
    let mut projection = Array2::zeros((n_in, d));
    let mut whitener = Array1::zeros(d);
    for (k, &i) in order.iter().take(d).enumerate() {
        let dir: Vec<f64> = (0..n_in).map(|j| v_t[(i, j)]).collect();
        let pivot = dir
            .iter()
            .copied()
            .reduce(|best, v| if v.abs() > best.abs() { v } else { best })
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (j, v) in dir.into_iter().enumerate() {
            projection[[j, k]] = sign * v;
        }
        whitener[k] = scale / svd.singular_values[i];
    }

    let mut values = centered.dot(&projection);
    values *= &whitener.view().insert_axis(Axis(0));
    l2_normalize_rows(&mut values);
    Ok(ReducedEmbeddings {
        values,
        projection,
        mean,
        whitener,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, k: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, k), |_| StandardNormal.sample(&mut rng))
    }

    fn covariance(x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mean = x.mean_axis(Axis(0)).unwrap();
        let c = x - &mean.insert_axis(Axis(0));
        c.t().dot(&c) / (n - 1) as f64
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let z = gaussian(200, 16, 1);
        // Mix the columns so the input is correlated.
        let mix = gaussian(16, 16, 2);
        let z = z.dot(&mix);
        let r = preprocess(z.view(), 8).unwrap();
        assert_eq!(r.dim(), 8);
        let cov = covariance(&r.whiten(z.view()));
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov[[i, j]] - want).abs() < 1e-6, "{i},{j}: {}", cov[[i, j]]);
            }
        }
        for row in r.values.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_covariance_input_is_rotated_only() {
        // Exactly white input: orthonormal columns scaled by sqrt(N - 1), zero mean.
        let n = 6;
        let mut z = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            z[[i, 0]] = a.cos();
            z[[i, 1]] = a.sin();
        }
        let cov = covariance(&z);
        z /= cov[[0, 0]].sqrt();
        let r = preprocess(z.view(), 2).unwrap();
        let w = r.whiten(z.view());
        // Pairwise inner products survive an orthogonal rotation.
        let g_in = z.dot(&z.t());
        let g_out = w.dot(&w.t());
        for (a, b) in g_in.iter().zip(g_out.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        for row in r.values.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn requested_dim_is_clamped() {
        let z = gaussian(20, 32, 3);
        let r = preprocess(z.view(), 128).unwrap();
        assert!(r.dim() <= 19);
        let z = gaussian(100, 32, 3);
        let r = preprocess(z.view(), 128).unwrap();
        assert_eq!(r.dim(), 32);
    }

    #[test]
    fn too_few_rows() {
        let z = gaussian(1, 4, 0);
        assert!(matches!(preprocess(z.view(), 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let z = Array2::from_elem((10, 4), 3.0);
        assert!(matches!(
            preprocess(z.view(), 2),
            Err(Error::DegenerateEmbeddings(_))
        ));
    }

    #[test]
    fn rank_deficient_input_drops_null_components() {
        // Third column is a copy of the first: rank 2.
        let mut z = gaussian(50, 3, 9);
        let c0 = z.column(0).to_owned();
        z.column_mut(2).assign(&c0);
        let r = preprocess(z.view(), 3).unwrap();
        assert_eq!(r.dim(), 2);
        assert!(r.whitener.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let z = gaussian(40, 5, 4);
        let a = preprocess(z.view(), 3).unwrap();
        let neg = z.mapv(|v| -v);
        let b = preprocess(neg.view(), 3).unwrap();
        // Directions are fixed by sign convention, so negated data flips the scores.
        for (x, y) in a.projection.iter().zip(b.projection.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
        for k in 0..3 {
            let col = a.projection.column(k);
            let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
    }
}
