//! Pseudo-label-balanced batch construction.
//!
//! Each slot of every batch is filled by drawing a cluster uniformly and then
//! a member of that cluster uniformly, both with replacement. Every cluster
//! therefore has probability exactly `1/c` per slot regardless of its size,
//! which keeps the prediction task from collapsing onto one dominant cluster.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clustering::PseudoLabelAssignment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalancedBatchPlan {
    pub batches: Vec<Vec<usize>>,
    pub batch_size: usize,
    pub epoch_length: usize,
    pub seed: u64,
}

impl BalancedBatchPlan {
    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.batches.iter().flatten().copied()
    }
}

/// Builds `ceil(N / batch_size)` batches of exactly `batch_size` indices.
pub fn build_epoch(
    assignment: &PseudoLabelAssignment,
    batch_size: usize,
    seed: u64,
) -> Result<BalancedBatchPlan> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let n = assignment.labels.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty assignment".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); assignment.num_clusters()];
    for (i, &l) in assignment.labels.iter().enumerate() {
        members
            .get_mut(l as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("label {l} out of range")))?
            .push(i);
    }
    if let Some(j) = members.iter().position(Vec::is_empty) {
        // Clustering repairs empty clusters, so this is an upstream bug.
        return Err(Error::InvalidArgument(format!(
            "cluster {j} is empty; assignments must be repaired before sampling"
        )));
    }
    let c = members.len();
    let epoch_length = n.div_ceil(batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches = (0..epoch_length)
        .map(|_| {
            (0..batch_size)
                .map(|_| {
                    let cluster = &members[rng.random_range(0..c)];
                    cluster[rng.random_range(0..cluster.len())]
                })
                .collect()
        })
        .collect();
    Ok(BalancedBatchPlan {
        batches,
        batch_size,
        epoch_length,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment(labels: Vec<u32>, c: usize) -> PseudoLabelAssignment {
        PseudoLabelAssignment::from_labels(labels, c, 0).unwrap()
    }

    #[test]
    fn single_cluster_draws_valid_indices() {
        let a = assignment(vec![0; 10], 1);
        let plan = build_epoch(&a, 4, 1).unwrap();
        assert_eq!(plan.epoch_length, 3);
        assert!(plan.batches.iter().all(|b| b.len() == 4));
        assert!(plan.slots().all(|i| i < 10));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = assignment(vec![0, 1, 1, 2, 2, 2], 3);
        assert_eq!(build_epoch(&a, 5, 9).unwrap(), build_epoch(&a, 5, 9).unwrap());
        assert_ne!(build_epoch(&a, 5, 9).unwrap(), build_epoch(&a, 5, 10).unwrap());
    }

    #[test]
    fn covers_at_least_n_slots() {
        for n in 1..40 {
            let a = assignment((0..n).map(|i| (i % 2) as u32).collect(), 2.min(n as usize));
            for bs in [1, 3, 64] {
                let plan = build_epoch(&a, bs, 0).unwrap();
                assert!(plan.epoch_length * bs >= n as usize);
            }
        }
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let a = PseudoLabelAssignment {
            labels: vec![0, 0],
            epoch: 0,
            cluster_sizes: vec![2, 0],
        };
        assert!(build_epoch(&a, 2, 0).is_err());
    }

    #[test]
    fn zero_batch_size() {
        assert!(build_epoch(&assignment(vec![0], 1), 0, 0).is_err());
    }
}
