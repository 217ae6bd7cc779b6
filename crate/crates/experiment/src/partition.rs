//! Uniform IID partitioning of a dataset across VUs.

use fstl_core::protocols::LabeledData;
use fstl_core::rng::{derive_seed, SeedStream};
use fstl_core::scalar::Scalar;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionScheme {
    UniformIid,
}

/// Per-VU sample index assignments. Index lists are disjoint, cover the
/// dataset, and differ in size by at most one (remainder samples go to the
/// lowest vu_ids, round-robin).
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub n_vus: u32,
    pub assignments: Vec<Vec<usize>>,
}

/// Seeded shuffle followed by contiguous chunking.
pub fn partition<T: Scalar>(dataset: &Dataset<T>, n_vus: u32, seed: u64) -> Result<PartitionPlan> {
    let n = dataset.n();
    if n_vus == 0 {
        return Err(Error::Config("need at least one VU".into()));
    }
    if (n_vus as usize) > n {
        return Err(Error::Config(format!(
            "cannot partition {n} samples across {n_vus} VUs"
        )));
    }
    let mut stream = SeedStream::new(derive_seed(seed, &[0x7061_7274]));
    let perm = stream.permutation(n);
    let base = n / n_vus as usize;
    let rem = n % n_vus as usize;
    let mut assignments = Vec::with_capacity(n_vus as usize);
    let mut cursor = 0;
    for i in 0..n_vus as usize {
        let size = base + usize::from(i < rem);
        assignments.push(perm[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(PartitionPlan {
        scheme: PartitionScheme::UniformIid,
        n_vus,
        assignments,
    })
}

impl PartitionPlan {
    /// Materializes the per-VU shards.
    pub fn shards<T: Scalar>(&self, dataset: &Dataset<T>) -> Vec<LabeledData<T>> {
        self.assignments
            .iter()
            .map(|idx| dataset.subset(idx).to_labeled())
            .collect()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Checks disjointness, coverage and the size-balance invariant against
    /// a dataset of `total` samples.
    pub fn check(&self, total: usize) -> Result<()> {
        let mut seen = vec![false; total];
        for idx in &self.assignments {
            for &i in idx {
                if i >= total {
                    return Err(Error::Config(format!("index {i} out of range")));
                }
                if seen[i] {
                    return Err(Error::Config(format!("index {i} assigned twice")));
                }
                seen[i] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Config("partition does not cover the dataset".into()));
        }
        let sizes = self.shard_sizes();
        let (min, max) = (
            sizes.iter().min().copied().unwrap_or(0),
            sizes.iter().max().copied().unwrap_or(0),
        );
        if max - min > 1 {
            return Err(Error::Config(format!(
                "shard sizes differ by more than one: {min}..{max}"
            )));
        }
        Ok(())
    }
}
