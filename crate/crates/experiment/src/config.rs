//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use fstl_core::arch::{conv_classifier, mlp_classifier, CONV_CLASSIFIER_CUT, MLP_CLASSIFIER_CUT};
use fstl_core::latency::CostParams;
use fstl_core::network::NetSpec;
use fstl_core::protocols::{ProtocolKind, RoundConfig, StopRule};
use fstl_core::split::SplitSpec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        /// Dataset seed; defaults to a value derived from the run seed.
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_samples_per_class")]
        samples_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_input")]
        input: Vec<usize>,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Optional seeded training subset size.
        #[serde(default)]
        subset: Option<usize>,
    },
}

fn default_classes() -> usize {
    10
}
fn default_samples_per_class() -> usize {
    200
}
fn default_test_per_class() -> usize {
    50
}
fn default_input() -> Vec<usize> {
    vec![1, 12, 12]
}
fn default_separation() -> f64 {
    2.0
}
fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RoundSettings {
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Cut layer for split protocols; defaults to the architecture's
    /// narrowest cut (after the flatten layer of the conv classifier).
    #[serde(default)]
    pub cut: Option<usize>,
    /// Stop early once the mean training loss falls to this value.
    #[serde(default)]
    pub stop_loss: Option<f64>,
    /// Accepted for interface compatibility; unused by the algorithms.
    #[serde(default)]
    pub sigma: Option<f64>,
}

fn default_rounds() -> u32 {
    10
}
fn default_local_epochs() -> u32 {
    1
}
fn default_batch_size() -> usize {
    32
}
fn default_eta() -> f64 {
    0.05
}
fn default_alpha() -> f64 {
    1.0
}

impl Default for RoundSettings {
    fn default() -> Self {
        Self {
            rounds: default_rounds(),
            local_epochs: default_local_epochs(),
            batch_size: default_batch_size(),
            eta: default_eta(),
            alpha: default_alpha(),
            cut: None,
            stop_loss: None,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PretrainSettings {
    /// "sample-split" or "class-subset".
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub classes: Vec<usize>,
    #[serde(default = "default_pretrain_epochs")]
    pub epochs: u32,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Defaults to a value derived from the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_scheme() -> String {
    "sample-split".into()
}
fn default_fraction() -> f64 {
    0.5
}
fn default_pretrain_epochs() -> u32 {
    4
}

impl Default for PretrainSettings {
    fn default() -> Self {
        Self {
            scheme: default_scheme(),
            fraction: default_fraction(),
            classes: Vec::new(),
            epochs: default_pretrain_epochs(),
            eta: default_eta(),
            batch_size: default_batch_size(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LatencySettings {
    pub train_s_per_sample: f64,
    pub pretrained_s_per_sample: f64,
    pub fedavg_s: f64,
    pub merge_s: f64,
    pub rate_params_per_s: f64,
}

impl Default for LatencySettings {
    fn default() -> Self {
        let c = CostParams::default();
        Self {
            train_s_per_sample: c.train_s_per_sample,
            pretrained_s_per_sample: c.pretrained_s_per_sample,
            fedavg_s: c.fedavg_s,
            merge_s: c.merge_s,
            rate_params_per_s: c.rate,
        }
    }
}

impl LatencySettings {
    pub fn cost_params(&self) -> CostParams {
        CostParams {
            train_s_per_sample: self.train_s_per_sample,
            pretrained_s_per_sample: self.pretrained_s_per_sample,
            fedavg_s: self.fedavg_s,
            merge_s: self.merge_s,
            rate: self.rate_params_per_s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub protocols: Vec<ProtocolKind>,
    #[serde(default = "default_n_vus")]
    pub n_vus: Vec<u32>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub round: RoundSettings,
    #[serde(default)]
    pub pretrain: Option<PretrainSettings>,
    #[serde(default)]
    pub latency: LatencySettings,
}

fn default_n_vus() -> Vec<u32> {
    vec![2, 5, 10, 20]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// A ready-to-run synthetic configuration.
    pub fn default_synthetic(seed: u64, out_dir: PathBuf) -> Self {
        Self {
            seed,
            out_dir,
            protocols: vec![ProtocolKind::Fl, ProtocolKind::Fsl, ProtocolKind::Fstl],
            n_vus: vec![4],
            dataset: DatasetConfig::Synthetic {
                seed: None,
                classes: default_classes(),
                samples_per_class: default_samples_per_class(),
                test_per_class: default_test_per_class(),
                input: default_input(),
                separation: default_separation(),
                noise: default_noise(),
            },
            round: RoundSettings::default(),
            pretrain: Some(PretrainSettings::default()),
            latency: LatencySettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.protocols.is_empty() {
            return Err(Error::Config("at least one protocol is required".into()));
        }
        if self.n_vus.is_empty() || self.n_vus.contains(&0) {
            return Err(Error::Config("n_vus must be non-empty and positive".into()));
        }
        if self.protocols.contains(&ProtocolKind::Fstl) && self.pretrain.is_none() {
            return Err(Error::Config(
                "fstl requires a [pretrain] section".into(),
            ));
        }
        if let Some(p) = &self.pretrain {
            match p.scheme.as_str() {
                "sample-split" | "class-subset" => {}
                other => {
                    return Err(Error::Config(format!(
                        "unknown pretrain scheme '{other}' (expected sample-split or class-subset)"
                    )))
                }
            }
        }
        match &self.dataset {
            DatasetConfig::Synthetic { classes, input, .. } => {
                if *classes < 2 {
                    return Err(Error::Config("synthetic dataset needs >= 2 classes".into()));
                }
                if !(input.len() == 1 || (input.len() == 3 && input[0] == 1)) {
                    return Err(Error::Config(
                        "synthetic input must be [n] or [1, h, w]".into(),
                    ));
                }
            }
            DatasetConfig::Idx { subset, .. } => {
                if subset == &Some(0) {
                    return Err(Error::Config("idx subset must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// The architecture for a given per-sample input shape: the conv
    /// classifier for image-shaped data, the MLP for flat vectors.
    pub fn net_spec(&self, sample_shape: &[usize], classes: usize) -> Result<NetSpec> {
        match sample_shape {
            [1, h, w] if *h >= 3 && *w >= 3 => Ok(conv_classifier(*h, *w, classes)),
            [n] => Ok(mlp_classifier(*n, 64, classes)),
            other => Err(Error::Config(format!(
                "no architecture for input shape {other:?}"
            ))),
        }
    }

    /// Default cut for the derived architecture.
    pub fn default_cut(&self, sample_shape: &[usize]) -> usize {
        match sample_shape {
            [1, _, _] => CONV_CLASSIFIER_CUT,
            _ => MLP_CLASSIFIER_CUT,
        }
    }

    /// Builds the core round configuration for one protocol.
    pub fn round_config(&self, protocol: ProtocolKind, sample_shape: &[usize]) -> RoundConfig {
        let cut = protocol
            .is_split()
            .then(|| SplitSpec::new(self.round.cut.unwrap_or_else(|| self.default_cut(sample_shape))));
        RoundConfig {
            protocol,
            max_rounds: self.round.rounds,
            local_epochs: self.round.local_epochs,
            batch_size: self.round.batch_size,
            eta: self.round.eta,
            alpha: self.round.alpha,
            cut,
            seed: self.seed,
            stop: match self.round.stop_loss {
                Some(loss) => StopRule::LossThreshold { loss },
                None => StopRule::MaxRounds,
            },
        }
    }
}
