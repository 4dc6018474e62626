use alloc::vec;
use alloc::vec::Vec;

use super::margin::MarginParams;
use crate::error::{Error, Result};
use crate::geometry::{check_labels, CosineMatrix};

/// Scale and indicator parameter of the support-vector guided losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvParams {
    /// Indicator parameter; 1 recovers plain softmax.
    pub t: f64,
    /// Logit scale applied to every cosine.
    pub s: f64,
}

impl SvParams {
    pub const DEFAULT_S: f64 = 30.0;
    pub const DEFAULT_T: f64 = 1.2;
    /// Above this value training is known to stop converging.
    pub const STABLE_T_LIMIT: f64 = 1.4;

    pub const fn new(s: f64, t: f64) -> Self {
        Self { t, s }
    }

    pub const fn plain(s: f64) -> Self {
        Self { t: 1.0, s }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::InvalidParameter {
                name: "s",
                reason: "must be finite and > 0",
            });
        }
        if !(self.t.is_finite() && self.t >= 1.0) {
            return Err(Error::InvalidParameter {
                name: "t",
                reason: "must be finite and >= 1",
            });
        }
        Ok(())
    }
}

impl Default for SvParams {
    fn default() -> Self {
        Self::plain(Self::DEFAULT_S)
    }
}

/// Binary `N × K` mask of support-vector entries; the ground-truth column is always 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportVectorMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl SupportVectorMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> bool {
        self.data[i * self.cols + k]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, k: usize, v: bool) {
        self.data[i * self.cols + k] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn row_is_empty(&self, i: usize) -> bool {
        !self.row(i).iter().any(|&b| b)
    }

    /// Fraction of non-target entries flagged as support vectors.
    pub fn support_vector_rate(&self) -> f64 {
        let non_target = self.rows * self.cols.saturating_sub(1);
        if non_target == 0 {
            return 0.0;
        }
        self.count() as f64 / non_target as f64
    }
}

/// Support-vector mask against the plain decision boundary:
/// entry `(i, k)` is set iff `k ≠ y_i` and `cos_y − cos_k < 0`.
pub fn sv_mask(cos: &CosineMatrix, labels: &[usize]) -> Result<SupportVectorMask> {
    mask_against(cos, labels, |c| c)
}

/// Support-vector mask against the margin decision boundary:
/// entry `(i, k)` is set iff `k ≠ y_i` and `f(m, θ_y) − cos_k < 0`.
pub fn sv_x_mask(
    cos: &CosineMatrix,
    labels: &[usize],
    m: MarginParams,
) -> Result<SupportVectorMask> {
    m.validate()?;
    mask_against(cos, labels, |c| m.apply(c))
}

fn mask_against(
    cos: &CosineMatrix,
    labels: &[usize],
    target_score: impl Fn(f64) -> f64,
) -> Result<SupportVectorMask> {
    check_shape(cos, labels)?;
    let (n, k) = (cos.samples(), cos.classes());
    let mut mask = SupportVectorMask::empty(n, k);
    for (i, &y) in labels.iter().enumerate() {
        let reference = target_score(cos.get(i, y));
        for j in (0..k).filter(|&j| j != y) {
            mask.set(i, j, reference - cos.get(i, j) < 0.0);
        }
    }
    Ok(mask)
}

pub(crate) fn check_shape(cos: &CosineMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != cos.samples() {
        return Err(Error::DimensionMismatch {
            context: "labels per cosine row",
            expected: cos.samples(),
            found: labels.len(),
        });
    }
    check_labels(labels, cos.classes())
}

/// Multiplier `exp(s·(t−1)·(cos_k+1)·I_k)` applied to a non-target class term.
#[inline]
pub fn h_indicator(cos_k: f64, masked: bool, s: f64, t: f64) -> f64 {
    if !masked {
        return 1.0;
    }
    libm::exp(s * (t - 1.0) * (cos_k + 1.0))
}
