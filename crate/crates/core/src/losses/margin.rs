use core::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Combined margin `f(θ) = cos(m1·θ + m3) − m2` applied to the ground-truth logit.
///
/// `m1` is the multiplicative angular margin (A-Softmax), `m2` the additive
/// cosine margin (AM-Softmax) and `m3` the additive angular margin in radians
/// (Arc-Softmax).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginParams {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl MarginParams {
    pub const IDENTITY: Self = Self {
        m1: 1.0,
        m2: 0.0,
        m3: 0.0,
    };

    pub const DEFAULT_AM: f64 = 0.35;
    pub const DEFAULT_ARC: f64 = 0.5;

    pub const fn new(m1: f64, m2: f64, m3: f64) -> Self {
        Self { m1, m2, m3 }
    }

    /// Additive cosine margin.
    pub const fn am(m2: f64) -> Self {
        Self::new(1.0, m2, 0.0)
    }

    /// Additive angular margin.
    pub const fn arc(m3: f64) -> Self {
        Self::new(1.0, 0.0, m3)
    }

    /// Multiplicative angular margin.
    pub const fn angular(m1: f64) -> Self {
        Self::new(m1, 0.0, 0.0)
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// True when `f` reduces to `cos θ − m2`, so no trigonometry is needed.
    #[inline]
    pub(crate) fn is_additive_cosine(&self) -> bool {
        self.m1 == 1.0 && self.m3 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m1.is_finite() && self.m1 >= 1.0) {
            return Err(Error::InvalidMargin("m1 must be a finite value >= 1"));
        }
        if !(self.m2 >= 0.0 && self.m2 < 1.0) {
            return Err(Error::InvalidMargin("m2 must lie in [0, 1)"));
        }
        if !(self.m3 >= 0.0 && self.m3 < FRAC_PI_2) {
            return Err(Error::InvalidMargin("m3 must lie in [0, pi/2)"));
        }
        Ok(())
    }

    /// Margin-adjusted ground-truth cosine. Parameters are assumed valid.
    #[inline]
    pub(crate) fn apply(&self, cos_y: f64) -> f64 {
        let c = cos_y.clamp(-1.0, 1.0);
        if self.is_additive_cosine() {
            return c - self.m2;
        }
        let angle = self.m1 * libm::acos(c) + self.m3;
        libm::cos(angle.min(PI)) - self.m2
    }

    /// `m1·θ + m3` before the clamp to π, for boundary diagnostics.
    pub(crate) fn raw_angle(&self, cos_y: f64) -> f64 {
        self.m1 * libm::acos(cos_y.clamp(-1.0, 1.0)) + self.m3
    }
}

impl Default for MarginParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Evaluates the combined margin function on a ground-truth cosine.
///
/// The angle `m1·θ + m3` is clamped to π so the result stays monotone
/// non-increasing in θ for every valid parameter set.
pub fn margin_f(cos_y: f64, m: MarginParams) -> Result<f64> {
    m.validate()?;
    Ok(m.apply(cos_y))
}
