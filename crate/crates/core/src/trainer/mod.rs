//! Mini-batch training of a small embedding network on synthetic clusters.
//!
//! Each step embeds a shuffled batch, runs the configured loss through the
//! normalized cosine classifier, backpropagates into the network and applies
//! SGD with momentum and weight decay to every parameter, classifier included.

mod net;
mod sgd;
mod synthetic;

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{cosine_logits, normalize_rows, FeatureBatch, WeightMatrix};
use crate::gradients::full_backward;
use crate::losses::{sv_mask, sv_x_mask, LossSpec, SupportVectorMask};

pub use net::{evaluate_model, Activation, Dense, EmbeddingNet, NetGradients};
pub use sgd::Sgd;
pub use synthetic::{
    make_synthetic, nearest_center_accuracy, SyntheticData, SyntheticSpec, CENTER_ATTEMPTS,
    MAX_CENTER_COSINE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub spec: LossSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// 1-based epochs after which the learning rate is divided by `lr_drop_factor`.
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    /// Rescales the classifier rows to unit norm after every update.
    pub renormalize_weights_after_step: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub const DEFAULT_EPOCHS: usize = 60;
    pub const DEFAULT_BATCH_SIZE: usize = 64;
    pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
    pub const DEFAULT_LR_DROP_EPOCHS: [usize; 3] = [30, 45, 55];
    pub const DEFAULT_LR_DROP_FACTOR: f64 = 10.0;

    pub fn new(spec: LossSpec, seed: u64) -> Self {
        Self {
            spec,
            epochs: Self::DEFAULT_EPOCHS,
            batch_size: Self::DEFAULT_BATCH_SIZE,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
            momentum: Self::DEFAULT_MOMENTUM,
            weight_decay: Self::DEFAULT_WEIGHT_DECAY,
            lr_drop_epochs: Self::DEFAULT_LR_DROP_EPOCHS.to_vec(),
            lr_drop_factor: Self::DEFAULT_LR_DROP_FACTOR,
            renormalize_weights_after_step: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let checks: [(bool, &'static str, &'static str); 6] = [
            (self.epochs >= 1, "epochs", "must be >= 1"),
            (self.batch_size >= 1, "batch_size", "must be >= 1"),
            (
                self.learning_rate.is_finite() && self.learning_rate >= 0.0,
                "learning_rate",
                "must be finite and >= 0",
            ),
            ((0.0..1.0).contains(&self.momentum), "momentum", "must lie in [0, 1)"),
            (
                self.weight_decay.is_finite() && self.weight_decay >= 0.0,
                "weight_decay",
                "must be finite and >= 0",
            ),
            (
                self.lr_drop_factor.is_finite() && self.lr_drop_factor > 0.0,
                "lr_drop_factor",
                "must be finite and > 0",
            ),
        ];
        for (ok, name, reason) in checks {
            if !ok {
                return Err(Error::InvalidParameter { name, reason });
            }
        }
        Ok(())
    }

    /// Learning rate used during the 1-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.lr_drop_epochs
            .iter()
            .filter(|&&d| d < epoch)
            .fold(self.learning_rate, |lr, _| lr / self.lr_drop_factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's batches.
    pub mean_loss: f64,
    /// Nearest-classifier accuracy on the full training set after the epoch.
    pub train_accuracy: f64,
    /// Fraction of non-target entries flagged as support vectors over the epoch.
    pub sv_rate: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub model: EmbeddingNet,
}

/// Trains `net` on `data` for a fixed number of epochs.
///
/// The shuffle order is drawn from `config.seed` on its own stream, so two
/// runs with the same inputs are bit-identical. Any non-finite loss,
/// gradient, parameter or collapsed embedding ends training with
/// [`Error::Diverged`].
pub fn train(config: &TrainConfig, mut net: EmbeddingNet, data: &FeatureBatch) -> Result<TrainHistory> {
    config.validate()?;
    if data.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "sample width vs. network input",
            expected: net.input_dim(),
            found: data.dim(),
        });
    }
    if data.num_classes != net.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "label classes vs. classifier rows",
            expected: net.num_classes(),
            found: data.num_classes,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut opt = Sgd::new(config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let non_target = data.len() * (data.num_classes - 1);
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let diverged = |e: Error| match e {
            Error::DegenerateVector { .. } => Error::Diverged { epoch },
            other => other,
        };
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut masked = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(chunk);
            let (emb, trace) = net.forward_traced(&batch.data)?;
            if !emb.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let emb = FeatureBatch::new(emb, batch.labels, batch.num_classes)?;
            let (fwd, back) = full_backward(&emb, &net.classifier, &config.spec).map_err(diverged)?;
            loss_sum += fwd.loss.iter().sum::<f64>();
            masked += diagnostic_mask(&emb, &net, &config.spec).map_err(diverged)?.count();

            let grads = net.backward(&trace, &back.d_features, back.d_weights)?;
            if !grads.tensors.iter().flatten().all(|g| g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            opt.step(lr, net.parameters_mut(), &grads.tensors)?;
            if config.renormalize_weights_after_step {
                net.classifier = WeightMatrix::raw(normalize_rows(&net.classifier.data).map_err(diverged)?);
            }
            if !net.is_finite() {
                return Err(Error::Diverged { epoch });
            }
        }
        let mean_loss = loss_sum / data.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        records.push(EpochRecord {
            epoch,
            mean_loss,
            train_accuracy: classifier_accuracy(&net, data).map_err(diverged)?,
            sv_rate: masked as f64 / non_target as f64,
            learning_rate: lr,
        });
    }
    Ok(TrainHistory { records, model: net })
}

/// Support vectors against the variant's own decision boundary: the margin
/// boundary for margin-based variants, the plain one otherwise.
fn diagnostic_mask(emb: &FeatureBatch, net: &EmbeddingNet, spec: &LossSpec) -> Result<SupportVectorMask> {
    let cos = cosine_logits(&normalize_rows(&emb.data)?, &normalize_rows(&net.classifier.data)?)?;
    if spec.variant.uses_margin() {
        sv_x_mask(&cos, &emb.labels, spec.margin)
    } else {
        sv_mask(&cos, &emb.labels)
    }
}

/// Fraction of samples whose most similar classifier row is their own class.
/// Ties go to the lower class index.
pub fn classifier_accuracy(model: &EmbeddingNet, data: &FeatureBatch) -> Result<f64> {
    let emb = evaluate_model(model, data)?;
    let cos = cosine_logits(&emb.data, &normalize_rows(&model.classifier.data)?)?;
    let hits = (0..cos.samples())
        .filter(|&i| {
            let row = cos.row(i);
            let best = (1..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            best == data.labels[i]
        })
        .count();
    Ok(hits as f64 / data.len() as f64)
}
