use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Parameters of the mining weight `g(p_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningParams {
    /// Focal modulating factor; 0 disables modulation.
    pub gamma: f64,
    /// Fraction of highest-loss samples kept by hard mining; 1 keeps all.
    pub hard_fraction: f64,
}

impl MiningParams {
    pub const IDENTITY: Self = Self {
        gamma: 0.0,
        hard_fraction: 1.0,
    };

    pub const DEFAULT_GAMMA: f64 = 2.0;
    pub const DEFAULT_HARD_FRACTION: f64 = 0.7;

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: "must be finite and >= 0",
            });
        }
        if !(self.hard_fraction > 0.0 && self.hard_fraction <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "hard_fraction",
                reason: "must lie in (0, 1]",
            });
        }
        Ok(())
    }
}

impl Default for MiningParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Focal modulating weight `(1 − p_y)^γ`; `γ = 0` yields 1 everywhere.
#[inline]
pub fn focal_weight(p_y: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0;
    }
    libm::pow((1.0 - p_y).max(0.0), gamma)
}

/// Derivative of [`focal_weight`] with respect to `p_y`.
pub(crate) fn focal_weight_derivative(p_y: f64, gamma: f64) -> f64 {
    let q = 1.0 - p_y;
    if gamma == 0.0 || q <= 0.0 {
        return 0.0;
    }
    -gamma * libm::pow(q, gamma - 1.0)
}

/// Number of samples kept when mining `fraction` of `n`.
///
/// `fraction · n` is rounded up, except that products within 1e-9 of an
/// integer count as that integer (0.7 · 10 must keep 7, not 8).
pub fn hard_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = libm::round(x);
    let k = if (x - r).abs() < 1e-9 { r } else { libm::ceil(x) };
    (k as usize).clamp(usize::from(n > 0), n)
}

/// Marks the `ceil(fraction · N)` samples with the largest loss.
///
/// Ties are broken in favour of the lower sample index.
pub fn hm_select(per_sample_loss: &[f64], hard_fraction: f64) -> Vec<bool> {
    let n = per_sample_loss.len();
    let keep = hard_count(hard_fraction, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        per_sample_loss[b]
            .total_cmp(&per_sample_loss[a])
            .then(a.cmp(&b))
    });
    let mut selected = vec![false; n];
    for &i in &order[..keep] {
        selected[i] = true;
    }
    selected
}
