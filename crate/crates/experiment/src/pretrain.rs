//! Transfer-learning pretraining: train the full (unsplit) architecture on
//! a source task and serialize the weights for FSTL initialization.
//!
//! Two source-task constructions are offered: a disjoint sample split
//! (pretrain on a held-out fraction of the training pool; the remainder
//! becomes the target pool) and a class subset (pretrain only on samples of
//! chosen classes for a harsher transfer gap; the target task keeps all
//! samples).

use fstl_core::network::{init_network, LossTarget, NetSpec, Network};
use fstl_core::protocols::{batch_slices, evaluate, shard_order};
use fstl_core::rng::{derive_seed, SeedStream};
use fstl_core::weights::save_weights;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SourceTask {
    /// Pretrain on `fraction` of the pool; the rest is the target pool.
    SampleSplit { fraction: f64 },
    /// Pretrain on the samples of the listed classes; the target task keeps
    /// the full pool.
    ClassSubset { classes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSpec {
    pub source: SourceTask,
    pub epochs: u32,
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Sidecar metadata recorded next to the weight file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PretrainMetadata {
    pub scheme: String,
    pub epochs: u32,
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub source_fit_samples: usize,
    pub source_eval_samples: usize,
    /// Accuracy on held-out source-task data after training.
    pub source_accuracy: f64,
}

#[derive(Debug)]
pub struct PretrainOutput {
    /// Serialized weights of the pretrained full network.
    pub weights: Vec<u8>,
    pub metadata: PretrainMetadata,
    /// Sample indices (into the pool) the source task consumed.
    pub source_indices: Vec<usize>,
    /// Sample indices forming the target pool.
    pub target_indices: Vec<usize>,
}

fn source_target_indices<T: fstl_core::Scalar>(
    spec: &PretrainSpec,
    pool: &Dataset<T>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = pool.n();
    match &spec.source {
        SourceTask::SampleSplit { fraction } => {
            if !(*fraction > 0.0 && *fraction < 1.0) {
                return Err(Error::Config(format!(
                    "sample-split fraction must lie in (0, 1), got {fraction}"
                )));
            }
            let n_source = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
            let mut stream = SeedStream::new(derive_seed(spec.seed, &[0x7372_6373_706c]));
            let perm = stream.permutation(n);
            let mut source: Vec<usize> = perm[..n_source].to_vec();
            let mut target: Vec<usize> = perm[n_source..].to_vec();
            source.sort_unstable();
            target.sort_unstable();
            Ok((source, target))
        }
        SourceTask::ClassSubset { classes } => {
            if classes.len() < 2 {
                return Err(Error::Config(
                    "class-subset source needs at least 2 classes".into(),
                ));
            }
            if classes.iter().any(|&c| c >= pool.class_count) {
                return Err(Error::Config(format!(
                    "class subset {classes:?} exceeds class count {}",
                    pool.class_count
                )));
            }
            let source: Vec<usize> = (0..n)
                .filter(|&i| {
                    let label = pool.labels.data()[i].to_acc() as usize;
                    classes.contains(&label)
                })
                .collect();
            if source.is_empty() {
                return Err(Error::Config("class subset selects no samples".into()));
            }
            Ok((source, (0..n).collect()))
        }
    }
}

/// Trains the full architecture on the source task and returns the weight
/// stream, metadata, and the source/target index split.
pub fn pretrain<T: fstl_core::Scalar>(
    spec: &PretrainSpec,
    arch: &NetSpec,
    pool: &Dataset<T>,
) -> Result<PretrainOutput> {
    if spec.batch_size == 0 {
        return Err(Error::Config("pretrain batch_size must be >= 1".into()));
    }
    let (source_indices, target_indices) = source_target_indices(spec, pool)?;

    // Hold out the tail 20% of a seeded shuffle of the source for the
    // reported source-task accuracy.
    let mut stream = SeedStream::new(derive_seed(spec.seed, &[0x6576_616c]));
    let mut shuffled = source_indices.clone();
    stream.shuffle(&mut shuffled);
    let n_eval = (shuffled.len() / 5).max(usize::from(shuffled.len() > 1));
    let (fit_idx, eval_idx) = shuffled.split_at(shuffled.len() - n_eval);
    let fit = pool.subset(fit_idx).to_labeled();
    let eval_data = if eval_idx.is_empty() {
        fit.clone()
    } else {
        pool.subset(eval_idx).to_labeled()
    };

    let mut net: Network<T> = init_network(arch, spec.seed)?;
    let eta = T::from_acc(spec.eta);
    for epoch in 1..=spec.epochs {
        let order = shard_order(spec.seed, 0, epoch, fit.n());
        for batch_idx in batch_slices(&order, spec.batch_size) {
            let batch = fit.select(batch_idx);
            let trace = net.forward(&batch.features)?;
            let (grads, _) = net.backward(&trace, LossTarget::Labels(&batch.labels))?;
            net.sgd_step(&grads, eta)?;
        }
    }
    let (_, source_accuracy) = evaluate(&net, &eval_data)?;

    Ok(PretrainOutput {
        weights: save_weights(&net),
        metadata: PretrainMetadata {
            scheme: match &spec.source {
                SourceTask::SampleSplit { .. } => "sample-split".into(),
                SourceTask::ClassSubset { .. } => "class-subset".into(),
            },
            epochs: spec.epochs,
            eta: spec.eta,
            batch_size: spec.batch_size,
            seed: spec.seed,
            source_fit_samples: fit_idx.len(),
            source_eval_samples: eval_idx.len(),
            source_accuracy,
        },
        source_indices,
        target_indices,
    })
}

/// Verifies that no source sample index appears in any target shard
/// (the disjoint-sample scheme's invariant).
pub fn verify_disjoint(source: &[usize], shard_assignments: &[Vec<usize>]) -> Result<()> {
    let source_set: std::collections::HashSet<usize> = source.iter().copied().collect();
    for (vu, shard) in shard_assignments.iter().enumerate() {
        if let Some(&hit) = shard.iter().find(|i| source_set.contains(i)) {
            return Err(Error::Config(format!(
                "source sample {hit} also appears in vu {vu}'s shard"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, SplitTag};
    use fstl_core::arch::mlp_classifier;
    use fstl_core::weights::load_weights;

    fn pool() -> Dataset<f32> {
        synth_dataset(77, 60, 3, &[6], 2.5, 1.0, SplitTag::Train).unwrap()
    }

    fn spec(source: SourceTask, epochs: u32) -> PretrainSpec {
        PretrainSpec {
            source,
            epochs,
            eta: 0.1,
            batch_size: 16,
            seed: 31,
        }
    }

    #[test]
    fn sample_split_produces_disjoint_covering_halves() {
        let pool = pool();
        let out = pretrain(
            &spec(SourceTask::SampleSplit { fraction: 0.5 }, 2),
            &mlp_classifier(6, 12, 3),
            &pool,
        )
        .unwrap();
        let mut all: Vec<usize> = out
            .source_indices
            .iter()
            .chain(&out.target_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..pool.n()).collect::<Vec<_>>());
        assert_eq!(out.source_indices.len(), pool.n() / 2);
        verify_disjoint(&out.source_indices, std::slice::from_ref(&out.target_indices)).unwrap();
    }

    #[test]
    fn zero_epochs_saves_the_seeded_initialization() {
        let pool = pool();
        let arch = mlp_classifier(6, 12, 3);
        let out = pretrain(&spec(SourceTask::SampleSplit { fraction: 0.5 }, 0), &arch, &pool)
            .unwrap();
        let init: Network<f32> = init_network(&arch, 31).unwrap();
        assert_eq!(out.weights, save_weights(&init));
    }

    #[test]
    fn trained_weights_differ_from_initialization_and_load_back() {
        let pool = pool();
        let arch = mlp_classifier(6, 12, 3);
        let out = pretrain(&spec(SourceTask::SampleSplit { fraction: 0.5 }, 3), &arch, &pool)
            .unwrap();
        let init: Network<f32> = init_network(&arch, 31).unwrap();
        assert_ne!(out.weights, save_weights(&init));
        let loaded: Network<f32> = load_weights(&out.weights, &arch).unwrap();
        assert_eq!(loaded.param_count(), init.param_count());
        assert!(out.metadata.source_accuracy > 0.5);
    }

    #[test]
    fn class_subset_selects_only_those_labels() {
        let pool = pool();
        let out = pretrain(
            &spec(SourceTask::ClassSubset { classes: vec![0, 1] }, 1),
            &mlp_classifier(6, 12, 3),
            &pool,
        )
        .unwrap();
        for &i in &out.source_indices {
            let label = pool.labels.data()[i] as usize;
            assert!(label < 2, "label {label} leaked into the source task");
        }
        assert_eq!(out.target_indices.len(), pool.n());
    }

    #[test]
    fn class_subset_pretraining_clears_ninety_percent_source_accuracy() {
        // Pinned from seeded runs: seeds 31..=33 land between 0.975 and 0.99.
        use fstl_core::arch::conv_classifier;
        let pool: Dataset<f32> =
            synth_dataset(77, 200, 10, &[1, 12, 12], 4.5, 1.0, SplitTag::Train).unwrap();
        let spec = PretrainSpec {
            source: SourceTask::ClassSubset {
                classes: vec![0, 1, 2, 3, 4],
            },
            epochs: 8,
            eta: 0.2,
            batch_size: 32,
            seed: 31,
        };
        let out = pretrain(&spec, &conv_classifier(12, 12, 10), &pool).unwrap();
        assert!(
            out.metadata.source_accuracy > 0.9,
            "held-out source accuracy {}",
            out.metadata.source_accuracy
        );
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let pool = pool();
        let arch = mlp_classifier(6, 12, 3);
        for fraction in [0.0, 1.0, -0.5] {
            let err = pretrain(
                &spec(SourceTask::SampleSplit { fraction }, 1),
                &arch,
                &pool,
            )
            .unwrap_err();
            assert_eq!(err.exit_code(), 1, "{err}");
        }
        let err = pretrain(
            &spec(SourceTask::ClassSubset { classes: vec![9] }, 1),
            &arch,
            &pool,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
    }

    #[test]
    fn verify_disjoint_catches_overlap() {
        assert!(verify_disjoint(&[1, 5, 9], &[vec![0, 2], vec![3, 4]]).is_ok());
        let err = verify_disjoint(&[1, 5], &[vec![0, 5]]).unwrap_err();
        assert!(err.to_string().contains("source sample 5"), "{err}");
    }
}
