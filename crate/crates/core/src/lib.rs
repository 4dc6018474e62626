//! Hypersphere classification losses with support-vector guided mining.
//!
//! The crate covers the whole family of normalized softmax losses used for
//! embedding learning on the unit sphere: plain softmax, mining-based losses
//! (focal and hard mining), margin-based losses under the combined margin
//! `cos(m1·θ + m3) − m2`, their naive fusions, and the support-vector guided
//! variants (SV-Softmax and SV-X-Softmax) that inflate the logits of
//! mis-classified non-target classes.
//!
//! Everything is `no_std` with `alloc`: forward passes, hand-derived backward
//! passes through the normalization maps, a finite-difference checker, a small
//! SGD trainer on synthetic Gaussian clusters and verification/identification
//! metrics. File formats, configuration and the command-line front end live in
//! the `svsoftmax` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;
pub mod eval;
pub mod geometry;
pub mod gradients;
pub mod losses;
pub mod matrix;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{
    cosine_logits, normalize_backward, normalize_rows, CosineMatrix, FeatureBatch, WeightMatrix,
    NORM_FLOOR,
};
pub use gradients::{
    finite_difference_check, finite_difference_check_with, full_backward, full_forward,
    loss_backward, margin_df, random_problem, BackwardOutput, BoundaryKind, BoundaryProximity, GradCheckReport, GradEntry,
};
pub use losses::{
    focal_weight, h_indicator, hm_select, loss_forward, loss_forward_frozen, margin_f,
    margin_softmax_forward, mining_margin_forward, softmax_forward, sv_mask, sv_softmax_forward,
    sv_x_mask, sv_x_softmax_forward, ForwardOutput, FrozenState, LossSpec, LossVariant,
    MarginParams, MiningParams, SupportVectorMask, SvParams,
};
pub use matrix::Matrix;
pub use trainer::{
    classifier_accuracy, evaluate_model, make_synthetic, nearest_center_accuracy, train,
    EmbeddingNet, EpochRecord, SyntheticData, SyntheticSpec, TrainConfig, TrainHistory,
};
pub use eval::{
    angular_stats, build_pairs, rank1_identification, roc_curve, tpr_at_far, EvalReport, PairSet,
    TprPoint,
};
