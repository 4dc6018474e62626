//! Central finite-difference verification of the analytic backward pass.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{full_backward, margin_df, BackwardOutput};
use crate::error::{Error, Result};
use crate::geometry::{cosine_logits, normalize_rows, CosineMatrix, FeatureBatch, WeightMatrix};
use crate::losses::{loss_forward_frozen, ForwardOutput, FrozenState, LossSpec, LossVariant, MarginParams};
use crate::matrix::{dot, l2_norm, Matrix};

/// Denominator floor of the relative error `|a − b| / max(|a|, |b|, floor)`.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Coordinate of a raw input that was perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradEntry {
    Feature { sample: usize, dim: usize },
    Weight { class: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// `reference − cos_k` is within reach of the perturbation, so the mask may flip.
    SupportVector,
    /// The margin angle `m1·θ + m3` sits at the clamp to π.
    MarginClamp,
    /// `θ_y` is so close to 0 that the margin derivative is singular.
    MarginSingularity,
}

/// A (sample, class) pair too close to a non-differentiable point to check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryProximity {
    pub sample: usize,
    pub class: usize,
    pub slack: f64,
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_entry: Option<GradEntry>,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Number of coordinates compared.
    pub checked: usize,
    /// Number of coordinates skipped because of boundary proximity.
    pub excluded: usize,
    pub warnings: Vec<BoundaryProximity>,
}

/// Compares [`full_backward`] with central differences of the forward pass.
pub fn finite_difference_check(
    x: &FeatureBatch,
    w: &WeightMatrix,
    spec: &LossSpec,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    finite_difference_check_with(x, w, spec, step, tolerance, |x, w, spec| {
        full_backward(x, w, spec).map(|(_, b)| b)
    })
}

/// Like [`finite_difference_check`], against an arbitrary analytic gradient.
///
/// Every raw coordinate of `x` and `w` is moved by `±step` and the whole
/// forward pass (normalization, cosines, support-vector mask) is recomputed.
/// Mining weights that the backward pass treats as constants are held at
/// their unperturbed values. Coordinates that can move a sample across a
/// mask boundary or the margin clamp are excluded and reported as warnings.
pub fn finite_difference_check_with<F>(
    x: &FeatureBatch,
    w: &WeightMatrix,
    spec: &LossSpec,
    step: f64,
    tolerance: f64,
    analytic: F,
) -> Result<GradCheckReport>
where
    F: FnOnce(&FeatureBatch, &WeightMatrix, &LossSpec) -> Result<BackwardOutput>,
{
    if !(1e-8..=1e-4).contains(&step) {
        return Err(Error::InvalidParameter {
            name: "step",
            reason: "must lie in [1e-8, 1e-4]",
        });
    }
    if !(tolerance > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tolerance",
            reason: "must be > 0",
        });
    }
    spec.validate()?;
    let w = WeightMatrix::raw(w.data.clone());
    let (_, base) = super::full_forward(x, &w, spec)?;
    let frozen = FrozenState::constants_of(spec, &base);

    let warnings = boundary_scan(x, &w, spec, step)?;
    let mut skip_sample = vec![false; x.len()];
    let mut skip_class = vec![false; w.num_classes()];
    for b in &warnings {
        skip_sample[b.sample] = true;
        skip_class[x.labels[b.sample]] = true;
        skip_class[b.class] = true;
    }

    let grads = analytic(x, &w, spec)?;
    let base_geo = (normalize_rows(&x.data)?, normalize_rows(&w.data)?);
    let n = x.len() as f64;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_entry: None,
        step,
        tolerance,
        passed: true,
        checked: 0,
        excluded: 0,
        warnings,
    };

    let mut xp = x.clone();
    for i in 0..x.len() {
        for d in 0..x.dim() {
            if skip_sample[i] {
                report.excluded += 1;
                continue;
            }
            let orig = xp.data[(i, d)];
            xp.data[(i, d)] = orig + step;
            let plus = evaluate(&xp, &w, spec, &frozen)?;
            xp.data[(i, d)] = orig - step;
            let minus = evaluate(&xp, &w, spec, &frozen)?;
            xp.data[(i, d)] = orig;
            let entry = GradEntry::Feature { sample: i, dim: d };
            let dc = cos_change(&base_geo, x, &w, entry, step);
            let numeric = loss_change(&plus, &minus, &dc, &x.labels, spec, frozen.weights.is_some()) / (2.0 * step * n);
            record(&mut report, grads.d_features[(i, d)], numeric, entry);
        }
    }

    let mut wp = w.clone();
    for c in 0..w.num_classes() {
        for d in 0..w.data.cols() {
            if skip_class[c] {
                report.excluded += 1;
                continue;
            }
            let orig = wp.data[(c, d)];
            wp.data[(c, d)] = orig + step;
            let plus = evaluate(x, &wp, spec, &frozen)?;
            wp.data[(c, d)] = orig - step;
            let minus = evaluate(x, &wp, spec, &frozen)?;
            wp.data[(c, d)] = orig;
            let entry = GradEntry::Weight { class: c, dim: d };
            let dc = cos_change(&base_geo, x, &w, entry, step);
            let numeric = loss_change(&plus, &minus, &dc, &x.labels, spec, frozen.weights.is_some()) / (2.0 * step * n);
            record(&mut report, grads.d_weights[(c, d)], numeric, entry);
        }
    }

    report.passed = report.max_relative_error < tolerance;
    Ok(report)
}

fn evaluate(
    x: &FeatureBatch,
    w: &WeightMatrix,
    spec: &LossSpec,
    frozen: &FrozenState,
) -> Result<(CosineMatrix, ForwardOutput)> {
    let x_hat = normalize_rows(&x.data)?;
    let w_hat = normalize_rows(&w.data)?;
    let cos = cosine_logits(&x_hat, &w_hat)?;
    let forward = loss_forward_frozen(&cos, &x.labels, spec, frozen)?;
    Ok((cos, forward))
}

/// `cos⁺ − cos⁻` for a `±h` move of one raw coordinate, `N × K`.
///
/// With `v` the moved raw vector, `u` the fixed unit vector and `a = u·v`,
/// `cos± = (a ± h·u_d) / n±` where `n± = ‖v ± h·e_d‖`, and
/// `n⁻ − n⁺ = −4·h·v_d / (n⁺ + n⁻)`, so the difference needs no subtraction
/// of nearly equal cosines.
fn cos_change(
    (x_hat, w_hat): &(Matrix, Matrix),
    x: &FeatureBatch,
    w: &WeightMatrix,
    entry: GradEntry,
    h: f64,
) -> Matrix {
    let delta = |v: &[f64], u: &[f64], d: usize| {
        let a = dot(u, v);
        let n2: f64 = v.iter().map(|e| e * e).sum();
        let np = libm::sqrt(n2 + 2.0 * h * v[d] + h * h);
        let nm = libm::sqrt(n2 - 2.0 * h * v[d] + h * h);
        let dn = -4.0 * h * v[d] / (np + nm);
        (a * dn + h * u[d] * (np + nm)) / (np * nm)
    };
    let mut out = Matrix::zeros(x.len(), w.num_classes());
    match entry {
        GradEntry::Feature { sample, dim } => {
            for k in 0..w.num_classes() {
                out[(sample, k)] = delta(x.data.row(sample), w_hat.row(k), dim);
            }
        }
        GradEntry::Weight { class, dim } => {
            for i in 0..x.len() {
                out[(i, class)] = delta(w.data.row(class), x_hat.row(i), dim);
            }
        }
    }
    out
}

/// `f(c⁺) − f(c⁻)` for the margin function given `Δc = c⁺ − c⁻`.
///
/// The angle change comes from `sin(θ⁻ − θ⁺) = Δc·(c⁺(c⁺ + c⁻)/(sin θ⁺ + sin θ⁻) + sin θ⁺)`
/// and the cosine change from `cos A⁺ − cos A⁻ = −2·sin((A⁺ + A⁻)/2)·sin((A⁺ − A⁻)/2)`.
fn margin_change(m: MarginParams, cp: f64, cm: f64, dc: f64) -> f64 {
    if m.is_additive_cosine() {
        return dc;
    }
    let (ap, am) = (m.raw_angle(cp), m.raw_angle(cm));
    let (sp, sm) = (libm::sqrt(1.0 - cp * cp), libm::sqrt(1.0 - cm * cm));
    if ap >= PI || am >= PI || sp + sm == 0.0 || cp.abs() >= 1.0 || cm.abs() >= 1.0 {
        return m.apply(cp) - m.apply(cm);
    }
    let d_theta = -libm::asin(dc * (cp * (cp + cm) / (sp + sm) + sp));
    let d_angle = m.m1 * d_theta;
    -2.0 * libm::sin(0.5 * (ap + am)) * libm::sin(0.5 * d_angle)
}

/// `Σ_i (loss⁺_i − loss⁻_i)` without subtracting two rounded losses.
///
/// Per sample, `ce⁺ − ce⁻ = log1p(Σ_k p⁻_k · expm1(z⁺_k − z⁻_k)) − (z⁺_y − z⁻_y)`,
/// which is exact algebra on the two forward passes but keeps relative
/// precision when the change is far below the size of the loss itself.
/// Logit changes are built from [`cos_change`]; where the mask differs
/// between the two passes the logits are differenced directly.
/// A recomputed focal weight is differenced the same way through `1 − p_y`.
fn loss_change(
    (cos_plus, plus): &(CosineMatrix, ForwardOutput),
    (cos_minus, minus): &(CosineMatrix, ForwardOutput),
    dc: &Matrix,
    labels: &[usize],
    spec: &LossSpec,
    weights_frozen: bool,
) -> f64 {
    let recomputed_focal = spec.variant.uses_focal() && !weights_frozen;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let zp = plus.adjusted_logits.row(i);
        let zm = minus.adjusted_logits.row(i);
        let pm = minus.prob.row(i);
        let (cp, cm) = (cos_plus.row(i), cos_minus.row(i));
        let s = spec.sv.s;
        let dz = |k: usize| {
            let d = dc[(i, k)];
            if k == y {
                s * margin_change(spec.margin, cp[k], cm[k], d)
            } else if plus.mask.get(i, k) != minus.mask.get(i, k) {
                zp[k] - zm[k]
            } else if plus.mask.get(i, k) {
                s * spec.sv.t * d
            } else {
                s * d
            }
        };
        let mut acc = 0.0;
        for k in 0..zp.len() {
            acc += pm[k] * libm::expm1(dz(k));
        }
        let d_ce = libm::log1p(acc) - dz(y);
        total += if recomputed_focal {
            let gm = minus.weight[i];
            // q = 1 − p_y from the off-target mass; p_y⁺ = p_y⁻ · exp(−Δce)
            let q_minus: f64 = (0..pm.len()).filter(|&k| k != y).map(|k| pm[k]).sum();
            let dq = -pm[y] * libm::expm1(-d_ce);
            let d_g = if q_minus > 0.0 {
                gm * libm::expm1(spec.mining.gamma * libm::log1p(dq / q_minus))
            } else {
                plus.weight[i] - gm
            };
            plus.weight[i] * d_ce + minus.cross_entropy[i] * d_g
        } else {
            minus.weight[i] * d_ce
        };
    }
    total
}

fn record(report: &mut GradCheckReport, analytic: f64, numeric: f64, entry: GradEntry) {
    report.checked += 1;
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    let rel = (analytic - numeric).abs() / denom;
    // NaN must count as a failure
    if !(rel <= report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_entry = Some(entry);
    }
}

fn boundary_scan(
    x: &FeatureBatch,
    w: &WeightMatrix,
    spec: &LossSpec,
    step: f64,
) -> Result<Vec<BoundaryProximity>> {
    let x_hat = normalize_rows(&x.data)?;
    let w_hat = normalize_rows(&w.data)?;
    let cos = cosine_logits(&x_hat, &w_hat)?;
    let w_norms: Vec<f64> = w.data.iter_rows().map(l2_norm).collect();
    let m = spec.margin;
    let masked = matches!(spec.variant, LossVariant::SvSoftmax | LossVariant::SvxSoftmax);
    let margin_kinks = spec.variant.uses_margin() && !m.is_additive_cosine();

    let mut out = Vec::new();
    for (i, &y) in x.labels.iter().enumerate() {
        let x_norm = l2_norm(x.data.row(i));
        let c_y = cos.get(i, y);
        if margin_kinks {
            let sin_theta = libm::sin(libm::acos(c_y));
            let reach = 10.0 * step * m.m1 / (sin_theta.max(1e-300) * x_norm.min(w_norms[y]));
            let slack = PI - m.raw_angle(c_y);
            if slack.abs() < reach {
                out.push(BoundaryProximity { sample: i, class: y, slack, kind: BoundaryKind::MarginClamp });
            } else if sin_theta < 1e-3 {
                out.push(BoundaryProximity { sample: i, class: y, slack: sin_theta, kind: BoundaryKind::MarginSingularity });
            }
        }
        if !masked {
            continue;
        }
        let (reference, scale) = if spec.variant == LossVariant::SvxSoftmax {
            (m.apply(c_y), margin_df(c_y, m).abs().max(1.0))
        } else {
            (c_y, 1.0)
        };
        for k in (0..cos.classes()).filter(|&k| k != y) {
            let slack = reference - cos.get(i, k);
            let norm = x_norm.min(w_norms[y]).min(w_norms[k]);
            if slack.abs() < 10.0 * step * scale / norm {
                out.push(BoundaryProximity { sample: i, class: k, slack, kind: BoundaryKind::SupportVector });
            }
        }
    }
    Ok(out)
}

/// Seeded random raw problem: features and weights with standard normal entries.
pub fn random_problem(
    seed: u64,
    samples: usize,
    classes: usize,
    dim: usize,
) -> Result<(FeatureBatch, WeightMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize| -> Result<Matrix> {
        let data = (0..rows * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(rows, dim, data)
    };
    let x = draw(samples)?;
    let w = draw(classes)?;
    let labels = (0..samples).map(|i| i % classes).collect();
    let x = FeatureBatch::new(x, labels, classes)?;
    Ok((x, WeightMatrix::raw(w)))
}
