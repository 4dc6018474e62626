//! Hand-derived backward passes.
//!
//! For a sample with adjusted logits `z` and probabilities `p`, the
//! cross-entropy gradient is `∂L/∂z_k = p_k − δ_{k,y}`. The cosine gradient
//! follows from `∂z/∂cos`:
//!
//! * non-target, unmasked: `s`
//! * non-target, masked: `s·t` (the folded logit is `s·(t·cos + t − 1)`)
//! * target: `s·f'(cos_y)`, the margin-function derivative
//!
//! Features and class weights are both normalized before the cosine layer,
//! so `∂L/∂x` and `∂L/∂W` are pulled back through the normalization Jacobian.

mod check;

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{cosine_logits, normalize_backward, normalize_rows, CosineMatrix, FeatureBatch, WeightMatrix};
use crate::losses::{check_shape, focal_weight_derivative, loss_forward, ForwardOutput, LossSpec, MarginParams};
use crate::matrix::Matrix;

pub use check::{
    finite_difference_check, finite_difference_check_with, random_problem, BoundaryKind,
    BoundaryProximity, GradCheckReport, GradEntry, REL_ERROR_FLOOR,
};

/// Below this `sin θ` the margin derivative switches to its guarded form.
pub const SIN_GUARD: f64 = 1e-7;

/// Gradients of the mean batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOutput {
    /// `∂L/∂cos`, `N × K`.
    pub d_cos: Matrix,
    /// `∂L/∂W` with respect to the raw (unnormalized) class weights, `K × D`.
    pub d_weights: Matrix,
    /// `∂L/∂x` with respect to the raw (unnormalized) features, `N × D`.
    pub d_features: Matrix,
}

/// Derivative of the combined margin `cos(m1·θ + m3) − m2` with respect to `cos θ`.
///
/// Equals `m1·sin(m1·θ + m3) / sin θ`, exactly 1 for a pure additive cosine
/// margin and 0 where the angle is clamped at π. For `sin θ < SIN_GUARD`
/// (the Arc derivative is singular at θ = 0) it returns the one-sided
/// secant slope of the margin function over `2·SIN_GUARD²` in cosine, which
/// is finite and meets the analytic value at the guard boundary.
pub fn margin_df(cos_y: f64, m: MarginParams) -> f64 {
    if m.is_additive_cosine() {
        return 1.0;
    }
    let c = cos_y.clamp(-1.0, 1.0);
    let theta = libm::acos(c);
    let angle = m.m1 * theta + m.m3;
    if angle >= PI {
        return 0.0;
    }
    let sin_theta = libm::sin(theta);
    if sin_theta >= SIN_GUARD {
        return m.m1 * libm::sin(angle) / sin_theta;
    }
    let delta = 2.0 * SIN_GUARD * SIN_GUARD;
    let (lo, hi) = if c > 0.0 { (c - delta, c) } else { (c, c + delta) };
    (m.apply(hi) - m.apply(lo)) / (hi - lo)
}

/// `∂(mean loss)/∂cos` given the forward pass of the same inputs.
///
/// The support-vector mask and, unless `differentiate_focal_weight` is set,
/// the mining weights are constants of the forward pass.
pub fn loss_backward(
    cos: &CosineMatrix,
    labels: &[usize],
    spec: &LossSpec,
    forward: &ForwardOutput,
) -> Result<Matrix> {
    check_shape(cos, labels)?;
    let (n, k) = (cos.samples(), cos.classes());
    if forward.prob.shape() != (n, k)
        || forward.loss.len() != n
        || forward.weight.len() != n
        || forward.cross_entropy.len() != n
        || forward.mask.shape() != (n, k)
    {
        return Err(Error::StaleForward);
    }
    let s = spec.sv.s;
    let t = spec.sv.t;
    let differentiate_g = spec.variant.uses_focal() && spec.differentiate_focal_weight;
    let inv_n = 1.0 / n as f64;

    let mut d_cos = Matrix::zeros(n, k);
    for (i, &y) in labels.iter().enumerate() {
        let p = forward.prob.row(i);
        let g = forward.weight[i];
        let p_y = p[y];
        // ∂(g·CE)/∂z_j = g·(p_j − δ) + CE·g'(p_y)·p_y·(δ − p_j)
        let focal_term = if differentiate_g {
            forward.cross_entropy[i] * focal_weight_derivative(p_y, spec.mining.gamma) * p_y
        } else {
            0.0
        };
        let df = margin_df(cos.get(i, y), spec.margin);
        let out = d_cos.row_mut(i);
        for (j, o) in out.iter_mut().enumerate() {
            let delta = if j == y { 1.0 } else { 0.0 };
            let mut dz = g * (p[j] - delta);
            if differentiate_g {
                dz += focal_term * (delta - p[j]);
            }
            let dz_dcos = if j == y {
                s * df
            } else if forward.mask.get(i, j) {
                s * t
            } else {
                s
            };
            *o = dz * dz_dcos * inv_n;
        }
    }
    Ok(d_cos)
}

/// Normalizes raw features and weights, then runs the loss forward pass.
pub fn full_forward(
    x: &FeatureBatch,
    w: &WeightMatrix,
    spec: &LossSpec,
) -> Result<(CosineMatrix, ForwardOutput)> {
    let x_hat = normalize_rows(&x.data)?;
    let w_hat = w.normalized()?;
    let cos = cosine_logits(&x_hat, &w_hat.data)?;
    let forward = loss_forward(&cos, &x.labels, spec)?;
    Ok((cos, forward))
}

/// Forward and backward through the full normalized pipeline.
///
/// Gradients are taken with respect to the raw rows of `x` and `w`; both are
/// chained through [`normalize_backward`].
pub fn full_backward(
    x: &FeatureBatch,
    w: &WeightMatrix,
    spec: &LossSpec,
) -> Result<(ForwardOutput, BackwardOutput)> {
    if w.num_classes() != x.num_classes {
        return Err(Error::DimensionMismatch {
            context: "classifier rows vs. label classes",
            expected: x.num_classes,
            found: w.num_classes(),
        });
    }
    let x_hat = normalize_rows(&x.data)?;
    let w_hat = normalize_rows(&w.data)?;
    let cos = cosine_logits(&x_hat, &w_hat)?;
    let forward = loss_forward(&cos, &x.labels, spec)?;
    let d_cos = loss_backward(&cos, &x.labels, spec, &forward)?;

    let d_x_hat = d_cos.matmul(&w_hat)?;
    let d_w_hat = d_cos.transpose().matmul(&x_hat)?;
    let d_features = pull_back(&x.data, &d_x_hat)?;
    let d_weights = pull_back(&w.data, &d_w_hat)?;
    Ok((
        forward,
        BackwardOutput {
            d_cos,
            d_weights,
            d_features,
        },
    ))
}

fn pull_back(raw: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    let mut data = Vec::with_capacity(raw.rows() * raw.cols());
    for i in 0..raw.rows() {
        let g = normalize_backward(raw.row(i), upstream.row(i)).map_err(|e| match e {
            Error::DegenerateVector { norm, .. } => Error::DegenerateVector { row: i, norm },
            other => other,
        })?;
        data.extend(g);
    }
    Matrix::from_vec(raw.rows(), raw.cols(), data)
}
