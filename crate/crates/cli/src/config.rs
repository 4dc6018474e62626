//! Experiment configuration files.
//!
//! The format is TOML with four section kinds and one top-level key:
//!
//! ```toml
//! output_dir = "runs/demo"
//!
//! [dataset]          # synthetic clusters, shared by every loss
//! num_classes = 16
//! samples_per_class = 100
//! ambient_dim = 32
//! embed_dim = 16
//! noise_sigma = 0.35
//! seed = 0
//!
//! [training]
//! epochs = 60
//! hidden_layers = []
//! activation = "relu"
//!
//! [loss.1]
//! variant = "softmax"
//!
//! [loss.2]
//! variant = "sv-x-softmax"
//! margin = "am"
//! t = 1.2
//!
//! [eval]
//! fars = [0.1, 0.01]
//! max_pairs_per_kind = 10000
//! ```
//!
//! Every key except one `[loss.N]` table is optional; unknown keys are
//! rejected. Loss tables run in ascending order of `N`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use svsoftmax_core::trainer::Activation;
use svsoftmax_core::{
    LossSpec, LossVariant, MarginParams, MiningParams, SvParams, SyntheticSpec, TrainConfig,
};

use crate::error::ConfigError;

pub const DEFAULT_FARS: [f64; 2] = [1e-1, 1e-2];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: SyntheticSpec,
    pub training: TrainingConfig,
    pub losses: Vec<LossEntry>,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

/// Everything in [`TrainConfig`] except the loss, plus the network shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub renormalize_weights_after_step: bool,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEntry {
    /// The `N` of `[loss.N]`.
    pub index: u32,
    pub spec: LossSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub fars: Vec<f64>,
    pub max_pairs_per_kind: usize,
}

impl TrainingConfig {
    pub fn train_config(&self, spec: LossSpec) -> TrainConfig {
        TrainConfig {
            spec,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_drop_epochs: self.lr_drop_epochs.clone(),
            lr_drop_factor: self.lr_drop_factor,
            renormalize_weights_after_step: self.renormalize_weights_after_step,
            seed: self.seed,
        }
    }

    /// Layer widths `[ambient, hidden…, embed]`.
    pub fn widths(&self, dataset: &SyntheticSpec) -> Vec<usize> {
        std::iter::once(dataset.ambient_dim)
            .chain(self.hidden_layers.iter().copied())
            .chain(std::iter::once(dataset.embed_dim))
            .collect()
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::from_toml(text, &e))?;
        file.resolve()
    }

    /// Replaces the dataset and training seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.training.seed = seed;
    }

    /// Fully explicit TOML form: every key written, margins as `m1`/`m2`/`m3`.
    pub fn to_canonical_toml(&self) -> String {
        let d = &self.dataset;
        let t = &self.training;
        let file = ConfigFile {
            output_dir: Some(self.output_dir.to_string_lossy().into_owned()),
            dataset: Some(DatasetSection {
                num_classes: Some(d.num_classes),
                samples_per_class: Some(d.samples_per_class),
                ambient_dim: Some(d.ambient_dim),
                embed_dim: Some(d.embed_dim),
                noise_sigma: Some(d.noise_sigma),
                seed: Some(d.seed),
            }),
            training: Some(TrainingSection {
                epochs: Some(t.epochs),
                batch_size: Some(t.batch_size),
                learning_rate: Some(t.learning_rate),
                momentum: Some(t.momentum),
                weight_decay: Some(t.weight_decay),
                lr_drop_epochs: Some(t.lr_drop_epochs.clone()),
                lr_drop_factor: Some(t.lr_drop_factor),
                renormalize_weights_after_step: Some(t.renormalize_weights_after_step),
                hidden_layers: Some(t.hidden_layers.clone()),
                activation: Some(activation_key(t.activation).to_owned()),
                seed: Some(t.seed),
            }),
            loss: self
                .losses
                .iter()
                .map(|l| (l.index.to_string(), LossSection::explicit(&l.spec)))
                .collect(),
            eval: Some(EvalSection {
                fars: Some(self.eval.fars.clone()),
                max_pairs_per_kind: Some(self.eval.max_pairs_per_kind),
            }),
        };
        toml::to_string(&file).expect("configuration always serializes")
    }

    /// Hex SHA-256 of [`Self::to_canonical_toml`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

pub fn activation_key(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Identity => "identity",
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    output_dir: Option<String>,
    dataset: Option<DatasetSection>,
    training: Option<TrainingSection>,
    #[serde(default)]
    loss: BTreeMap<String, LossSection>,
    eval: Option<EvalSection>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    num_classes: Option<usize>,
    samples_per_class: Option<usize>,
    ambient_dim: Option<usize>,
    embed_dim: Option<usize>,
    noise_sigma: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    lr_drop_epochs: Option<Vec<usize>>,
    lr_drop_factor: Option<f64>,
    renormalize_weights_after_step: Option<bool>,
    hidden_layers: Option<Vec<usize>>,
    activation: Option<String>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSection {
    variant: String,
    /// `"am"`, `"arc"` or `"none"`; explicit `m1`/`m2`/`m3` override it.
    margin: Option<String>,
    s: Option<f64>,
    t: Option<f64>,
    m1: Option<f64>,
    m2: Option<f64>,
    m3: Option<f64>,
    gamma: Option<f64>,
    hard_fraction: Option<f64>,
    differentiate_focal_weight: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    fars: Option<Vec<f64>>,
    max_pairs_per_kind: Option<usize>,
}

impl LossSection {
    fn explicit(spec: &LossSpec) -> Self {
        Self {
            variant: spec.variant.key().to_owned(),
            margin: None,
            s: Some(spec.sv.s),
            t: Some(spec.sv.t),
            m1: Some(spec.margin.m1),
            m2: Some(spec.margin.m2),
            m3: Some(spec.margin.m3),
            gamma: Some(spec.mining.gamma),
            hard_fraction: Some(spec.mining.hard_fraction),
            differentiate_focal_weight: Some(spec.differentiate_focal_weight),
        }
    }

    fn resolve(&self, section: &str) -> Result<LossSpec, ConfigError> {
        let (variant, alias_margin) = variant_alias(&self.variant).ok_or_else(|| ConfigError::InvalidValue {
            key: format!("{section}.variant"),
            message: format!("unknown loss variant `{}`", self.variant),
        })?;
        let mut spec = LossSpec::with_defaults(variant);
        let margin_key = self.margin.as_deref().or(alias_margin);
        if let Some(m) = margin_key {
            if !variant.uses_margin() {
                return Err(ConfigError::InvalidValue {
                    key: format!("{section}.margin"),
                    message: format!("variant `{}` takes no margin", variant.key()),
                });
            }
            spec.margin = match m {
                "am" => MarginParams::am(MarginParams::DEFAULT_AM),
                "arc" => MarginParams::arc(MarginParams::DEFAULT_ARC),
                "none" => MarginParams::IDENTITY,
                other => {
                    return Err(ConfigError::InvalidValue {
                        key: format!("{section}.margin"),
                        message: format!("expected `am`, `arc` or `none`, found `{other}`"),
                    })
                }
            };
        }
        let s = self.s.unwrap_or(SvParams::DEFAULT_S);
        spec.sv = SvParams::new(s, self.t.unwrap_or(spec.sv.t));
        spec.margin = MarginParams::new(
            self.m1.unwrap_or(spec.margin.m1),
            self.m2.unwrap_or(spec.margin.m2),
            self.m3.unwrap_or(spec.margin.m3),
        );
        spec.mining = MiningParams {
            gamma: self.gamma.unwrap_or(spec.mining.gamma),
            hard_fraction: self.hard_fraction.unwrap_or(spec.mining.hard_fraction),
        };
        spec.differentiate_focal_weight = self.differentiate_focal_weight.unwrap_or(false);
        spec.validate().map_err(|e| ConfigError::InvalidValue {
            key: section.to_owned(),
            message: e.to_string(),
        })?;
        if spec.sv.t > SvParams::STABLE_T_LIMIT {
            log::warn!(
                "{section}: t = {} exceeds {}; training may fail to converge",
                spec.sv.t,
                SvParams::STABLE_T_LIMIT
            );
        }
        Ok(spec)
    }
}

/// Variant keys plus the usual names of margin losses.
fn variant_alias(name: &str) -> Option<(LossVariant, Option<&'static str>)> {
    let alias = match name {
        "am-softmax" => (LossVariant::MarginSoftmax, Some("am")),
        "arc-softmax" => (LossVariant::MarginSoftmax, Some("arc")),
        "sv-am-softmax" => (LossVariant::SvxSoftmax, Some("am")),
        "sv-arc-softmax" => (LossVariant::SvxSoftmax, Some("arc")),
        other => (LossVariant::from_key(other)?, None),
    };
    Some(alias)
}

fn parse_activation(key: &str) -> Result<Activation, ConfigError> {
    match key {
        "relu" => Ok(Activation::Relu),
        "identity" => Ok(Activation::Identity),
        other => Err(ConfigError::InvalidValue {
            key: "training.activation".into(),
            message: format!("expected `relu` or `identity`, found `{other}`"),
        }),
    }
}

impl ConfigFile {
    fn resolve(self) -> Result<ExperimentConfig, ConfigError> {
        let d = self.dataset.unwrap_or_default();
        let dataset = SyntheticSpec {
            num_classes: d.num_classes.unwrap_or(16),
            samples_per_class: d.samples_per_class.unwrap_or(100),
            ambient_dim: d.ambient_dim.unwrap_or(32),
            embed_dim: d.embed_dim.unwrap_or(16),
            noise_sigma: d.noise_sigma.unwrap_or(0.35),
            seed: d.seed.unwrap_or(0),
        };
        dataset.validate().map_err(|e| ConfigError::InvalidValue {
            key: "dataset".into(),
            message: e.to_string(),
        })?;

        let t = self.training.unwrap_or_default();
        let training = TrainingConfig {
            epochs: t.epochs.unwrap_or(TrainConfig::DEFAULT_EPOCHS),
            batch_size: t.batch_size.unwrap_or(TrainConfig::DEFAULT_BATCH_SIZE),
            learning_rate: t.learning_rate.unwrap_or(TrainConfig::DEFAULT_LEARNING_RATE),
            momentum: t.momentum.unwrap_or(TrainConfig::DEFAULT_MOMENTUM),
            weight_decay: t.weight_decay.unwrap_or(TrainConfig::DEFAULT_WEIGHT_DECAY),
            lr_drop_epochs: t
                .lr_drop_epochs
                .unwrap_or_else(|| TrainConfig::DEFAULT_LR_DROP_EPOCHS.to_vec()),
            lr_drop_factor: t.lr_drop_factor.unwrap_or(TrainConfig::DEFAULT_LR_DROP_FACTOR),
            renormalize_weights_after_step: t.renormalize_weights_after_step.unwrap_or(false),
            hidden_layers: t.hidden_layers.unwrap_or_default(),
            activation: parse_activation(t.activation.as_deref().unwrap_or("relu"))?,
            seed: t.seed.unwrap_or(0),
        };
        if training.hidden_layers.contains(&0) {
            return Err(ConfigError::InvalidValue {
                key: "training.hidden_layers".into(),
                message: "layer widths must be >= 1".into(),
            });
        }
        training
            .train_config(LossSpec::softmax(SvParams::DEFAULT_S))
            .validate()
            .map_err(|e| ConfigError::InvalidValue {
                key: "training".into(),
                message: e.to_string(),
            })?;

        let mut losses = self
            .loss
            .iter()
            .map(|(key, section)| {
                let index = key.parse::<u32>().map_err(|_| ConfigError::InvalidValue {
                    key: format!("loss.{key}"),
                    message: "loss tables are named `loss.N` with an integer N".into(),
                })?;
                let spec = section.resolve(&format!("loss.{key}"))?;
                Ok(LossEntry { index, spec })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        if losses.is_empty() {
            return Err(ConfigError::NoLosses);
        }
        losses.sort_by_key(|l| l.index);
        if let Some(w) = losses.windows(2).find(|w| w[0].index == w[1].index) {
            return Err(ConfigError::InvalidValue {
                key: format!("loss.{}", w[0].index),
                message: "duplicate loss index".into(),
            });
        }

        let e = self.eval.unwrap_or_default();
        let eval = EvalConfig {
            fars: e.fars.unwrap_or_else(|| DEFAULT_FARS.to_vec()),
            max_pairs_per_kind: e
                .max_pairs_per_kind
                .unwrap_or(svsoftmax_core::eval::DEFAULT_PAIR_CAP),
        };
        if eval.fars.is_empty() || eval.fars.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(ConfigError::InvalidValue {
                key: "eval.fars".into(),
                message: "need at least one target in (0, 1]".into(),
            });
        }
        if eval.max_pairs_per_kind == 0 {
            return Err(ConfigError::InvalidValue {
                key: "eval.max_pairs_per_kind".into(),
                message: "must be >= 1".into(),
            });
        }

        Ok(ExperimentConfig {
            dataset,
            training,
            losses,
            eval,
            output_dir: PathBuf::from(self.output_dir.unwrap_or_else(|| "svsoftmax-out".into())),
        })
    }
}
