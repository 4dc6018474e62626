//! Forward computation of every loss variant.
//!
//! All variants share one pipeline: build adjusted logits (margin on the
//! ground-truth entry, `h` inflation on masked non-target entries), take a
//! max-stabilized softmax, and multiply the cross-entropy by a per-sample
//! mining weight. Masked entries use the folded form
//! `s·cos + s·(t−1)·(cos+1)`, i.e. `s·(t·cos + t − 1)`, which equals
//! multiplying the class term by `h` but never exponentiates it separately.

mod margin;
mod mining;
mod support;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::CosineMatrix;
use crate::matrix::Matrix;

pub use margin::{margin_f, MarginParams};
pub(crate) use mining::focal_weight_derivative;
pub use mining::{focal_weight, hard_count, hm_select, MiningParams};
pub(crate) use support::check_shape;
pub use support::{h_indicator, sv_mask, sv_x_mask, SupportVectorMask, SvParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossVariant {
    Softmax,
    FocalSoftmax,
    HmSoftmax,
    MarginSoftmax,
    NaiveFusedFocal,
    NaiveFusedHm,
    SvSoftmax,
    SvxSoftmax,
}

impl LossVariant {
    pub const ALL: [Self; 8] = [
        Self::Softmax,
        Self::FocalSoftmax,
        Self::HmSoftmax,
        Self::MarginSoftmax,
        Self::NaiveFusedFocal,
        Self::NaiveFusedHm,
        Self::SvSoftmax,
        Self::SvxSoftmax,
    ];

    /// Stable lowercase identifier used by configuration files.
    pub fn key(self) -> &'static str {
        match self {
            Self::Softmax => "softmax",
            Self::FocalSoftmax => "focal-softmax",
            Self::HmSoftmax => "hm-softmax",
            Self::MarginSoftmax => "margin-softmax",
            Self::NaiveFusedFocal => "naive-focal",
            Self::NaiveFusedHm => "naive-hm",
            Self::SvSoftmax => "sv-softmax",
            Self::SvxSoftmax => "sv-x-softmax",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.key() == key)
    }

    pub fn uses_margin(self) -> bool {
        matches!(
            self,
            Self::MarginSoftmax | Self::NaiveFusedFocal | Self::NaiveFusedHm | Self::SvxSoftmax
        )
    }

    pub fn uses_t(self) -> bool {
        matches!(self, Self::SvSoftmax | Self::SvxSoftmax)
    }

    pub fn uses_focal(self) -> bool {
        matches!(self, Self::FocalSoftmax | Self::NaiveFusedFocal)
    }

    pub fn uses_hard_mining(self) -> bool {
        matches!(self, Self::HmSoftmax | Self::NaiveFusedHm)
    }
}

/// Loss variant together with every parameter group it may read.
///
/// Groups a variant does not read must hold their identity values so that a
/// spec always describes exactly one loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub variant: LossVariant,
    pub margin: MarginParams,
    pub sv: SvParams,
    pub mining: MiningParams,
    /// Differentiate the focal weight through `p_y` instead of treating it as a constant.
    pub differentiate_focal_weight: bool,
}

impl LossSpec {
    fn base(variant: LossVariant, s: f64) -> Self {
        Self {
            variant,
            margin: MarginParams::IDENTITY,
            sv: SvParams::plain(s),
            mining: MiningParams::IDENTITY,
            differentiate_focal_weight: false,
        }
    }

    pub fn softmax(s: f64) -> Self {
        Self::base(LossVariant::Softmax, s)
    }

    pub fn focal(s: f64, gamma: f64) -> Self {
        let mut spec = Self::base(LossVariant::FocalSoftmax, s);
        spec.mining.gamma = gamma;
        spec
    }

    pub fn hard_mining(s: f64, hard_fraction: f64) -> Self {
        let mut spec = Self::base(LossVariant::HmSoftmax, s);
        spec.mining.hard_fraction = hard_fraction;
        spec
    }

    pub fn margin(s: f64, margin: MarginParams) -> Self {
        Self {
            margin,
            ..Self::base(LossVariant::MarginSoftmax, s)
        }
    }

    pub fn naive_focal(s: f64, margin: MarginParams, gamma: f64) -> Self {
        let mut spec = Self {
            margin,
            ..Self::base(LossVariant::NaiveFusedFocal, s)
        };
        spec.mining.gamma = gamma;
        spec
    }

    pub fn naive_hm(s: f64, margin: MarginParams, hard_fraction: f64) -> Self {
        let mut spec = Self {
            margin,
            ..Self::base(LossVariant::NaiveFusedHm, s)
        };
        spec.mining.hard_fraction = hard_fraction;
        spec
    }

    pub fn sv(s: f64, t: f64) -> Self {
        Self {
            sv: SvParams::new(s, t),
            ..Self::base(LossVariant::SvSoftmax, s)
        }
    }

    pub fn sv_x(s: f64, t: f64, margin: MarginParams) -> Self {
        Self {
            sv: SvParams::new(s, t),
            margin,
            ..Self::base(LossVariant::SvxSoftmax, s)
        }
    }

    /// Spec of `variant` with its default parameters: s = 30, t = 1.2,
    /// AM margin 0.35, γ = 2 and a hard fraction of 0.7.
    pub fn with_defaults(variant: LossVariant) -> Self {
        let s = SvParams::DEFAULT_S;
        let am = MarginParams::am(MarginParams::DEFAULT_AM);
        match variant {
            LossVariant::Softmax => Self::softmax(s),
            LossVariant::FocalSoftmax => Self::focal(s, MiningParams::DEFAULT_GAMMA),
            LossVariant::HmSoftmax => Self::hard_mining(s, MiningParams::DEFAULT_HARD_FRACTION),
            LossVariant::MarginSoftmax => Self::margin(s, am),
            LossVariant::NaiveFusedFocal => Self::naive_focal(s, am, MiningParams::DEFAULT_GAMMA),
            LossVariant::NaiveFusedHm => {
                Self::naive_hm(s, am, MiningParams::DEFAULT_HARD_FRACTION)
            }
            LossVariant::SvSoftmax => Self::sv(s, SvParams::DEFAULT_T),
            LossVariant::SvxSoftmax => Self::sv_x(s, SvParams::DEFAULT_T, am),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sv.validate()?;
        self.mining.validate()?;
        let v = self.variant;
        if v.uses_margin() {
            self.margin.validate()?;
        } else if !self.margin.is_identity() {
            return Err(Error::InvalidParameter {
                name: "margin",
                reason: "variant does not use a margin; m must be (1, 0, 0)",
            });
        }
        if !v.uses_t() && self.sv.t != 1.0 {
            return Err(Error::InvalidParameter {
                name: "t",
                reason: "variant does not use support-vector inflation; t must be 1",
            });
        }
        if !v.uses_focal() && self.mining.gamma != 0.0 {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: "variant does not use focal weighting; gamma must be 0",
            });
        }
        if !v.uses_hard_mining() && self.mining.hard_fraction != 1.0 {
            return Err(Error::InvalidParameter {
                name: "hard_fraction",
                reason: "variant does not use hard mining; hard_fraction must be 1",
            });
        }
        Ok(())
    }

    /// Human-readable name such as `SV-AM-Softmax` or `F-Arc-Softmax`.
    pub fn name(&self) -> String {
        let m = &self.margin;
        let margin_tag = if m.is_identity() {
            ""
        } else if m.m1 == 1.0 && m.m3 == 0.0 {
            "AM-"
        } else if m.m1 == 1.0 && m.m2 == 0.0 {
            "Arc-"
        } else if m.m2 == 0.0 && m.m3 == 0.0 {
            "A-"
        } else {
            "CM-"
        };
        match self.variant {
            LossVariant::Softmax => "Softmax".into(),
            LossVariant::FocalSoftmax => "F-Softmax".into(),
            LossVariant::HmSoftmax => "HM-Softmax".into(),
            LossVariant::SvSoftmax => "SV-Softmax".into(),
            LossVariant::MarginSoftmax if margin_tag.is_empty() => "Margin-Softmax".into(),
            LossVariant::SvxSoftmax if margin_tag.is_empty() => "SV-X-Softmax".into(),
            LossVariant::MarginSoftmax => format!("{margin_tag}Softmax"),
            LossVariant::NaiveFusedFocal => format!("F-{margin_tag}Softmax"),
            LossVariant::NaiveFusedHm => format!("HM-{margin_tag}Softmax"),
            LossVariant::SvxSoftmax => format!("SV-{margin_tag}Softmax"),
        }
    }

    /// Whether the mining weight is a constant of the forward pass during backward.
    pub fn mining_weight_is_constant(&self) -> bool {
        self.variant.uses_hard_mining()
            || (self.variant.uses_focal() && !self.differentiate_focal_weight)
    }
}

/// Result of a forward pass over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Per-sample loss: `weight · cross_entropy`.
    pub loss: Vec<f64>,
    /// Per-sample cross-entropy `−log prob[i][y_i]` of the adjusted logits.
    pub cross_entropy: Vec<f64>,
    /// Per-sample mining weight `g(p_y)`; 1 for variants without mining.
    pub weight: Vec<f64>,
    /// Row-stochastic class probabilities.
    pub prob: Matrix,
    /// Logits after margin and `h` adjustment, including the scale `s`.
    pub adjusted_logits: Matrix,
    pub mask: SupportVectorMask,
}

impl ForwardOutput {
    pub fn samples(&self) -> usize {
        self.loss.len()
    }

    /// Batch loss: arithmetic mean of the per-sample losses in index order.
    pub fn mean_loss(&self) -> f64 {
        if self.loss.is_empty() {
            return 0.0;
        }
        self.loss.iter().sum::<f64>() / self.loss.len() as f64
    }
}

/// Forward-pass quantities to hold fixed instead of recomputing.
///
/// Used by the gradient checker: discrete selections (hard-mining picks, and
/// the focal weight when it is treated as constant) must not move under a
/// finite-difference perturbation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrozenState {
    pub mask: Option<SupportVectorMask>,
    pub weights: Option<Vec<f64>>,
}

impl FrozenState {
    /// Freezes whatever `spec` treats as constant during backward.
    pub fn constants_of(spec: &LossSpec, forward: &ForwardOutput) -> Self {
        Self {
            mask: None,
            weights: spec
                .mining_weight_is_constant()
                .then(|| forward.weight.clone()),
        }
    }
}

/// Plain normalized softmax cross-entropy.
pub fn softmax_forward(cos: &CosineMatrix, labels: &[usize], s: f64) -> Result<ForwardOutput> {
    loss_forward(cos, labels, &LossSpec::softmax(s))
}

/// Margin-based softmax: the ground-truth logit becomes `s · f(m, θ_y)`.
pub fn margin_softmax_forward(
    cos: &CosineMatrix,
    labels: &[usize],
    s: f64,
    m: MarginParams,
) -> Result<ForwardOutput> {
    loss_forward(cos, labels, &LossSpec::margin(s, m))
}

/// SV-Softmax: masked non-target logits are lifted to `s·(t·cos + t − 1)`.
pub fn sv_softmax_forward(
    cos: &CosineMatrix,
    labels: &[usize],
    sv: SvParams,
) -> Result<ForwardOutput> {
    loss_forward(cos, labels, &LossSpec::sv(sv.s, sv.t))
}

/// SV-X-Softmax: margin on the ground truth, mask against the margin boundary.
pub fn sv_x_softmax_forward(
    cos: &CosineMatrix,
    labels: &[usize],
    sv: SvParams,
    m: MarginParams,
) -> Result<ForwardOutput> {
    loss_forward(cos, labels, &LossSpec::sv_x(sv.s, sv.t, m))
}

/// Mining-weighted (margin) softmax: `g(p_y) · L_margin`.
///
/// Accepts the two naive fusions as well as their identity-margin special
/// cases (focal and hard-mining softmax).
pub fn mining_margin_forward(
    cos: &CosineMatrix,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<ForwardOutput> {
    if !(spec.variant.uses_focal() || spec.variant.uses_hard_mining()) {
        return Err(Error::InvalidParameter {
            name: "variant",
            reason: "mining_margin_forward needs a focal or hard-mining variant",
        });
    }
    loss_forward(cos, labels, spec)
}

/// Single entry point over all variants.
pub fn loss_forward(cos: &CosineMatrix, labels: &[usize], spec: &LossSpec) -> Result<ForwardOutput> {
    loss_forward_frozen(cos, labels, spec, &FrozenState::default())
}

/// Like [`loss_forward`], with parts of the forward state pinned by `frozen`.
pub fn loss_forward_frozen(
    cos: &CosineMatrix,
    labels: &[usize],
    spec: &LossSpec,
    frozen: &FrozenState,
) -> Result<ForwardOutput> {
    spec.validate()?;
    check_shape(cos, labels)?;
    let (n, k) = (cos.samples(), cos.classes());
    let s = spec.sv.s;
    let t = spec.sv.t;

    let mask = match (&frozen.mask, spec.variant) {
        (Some(m), _) => {
            if m.shape() != (n, k) {
                return Err(Error::StaleForward);
            }
            m.clone()
        }
        (None, LossVariant::SvSoftmax) => sv_mask(cos, labels)?,
        (None, LossVariant::SvxSoftmax) => sv_x_mask(cos, labels, spec.margin)?,
        (None, _) => SupportVectorMask::empty(n, k),
    };

    let mut logits = Matrix::zeros(n, k);
    let mut prob = Matrix::zeros(n, k);
    let mut ce = vec![0.0; n];
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row_mut(i);
        for (j, z) in row.iter_mut().enumerate() {
            let c = cos.get(i, j);
            *z = if j == y {
                s * spec.margin.apply(c)
            } else if mask.get(i, j) {
                s * c + s * (t - 1.0) * (c + 1.0)
            } else {
                s * c
            };
        }
        ce[i] = stable_softmax(row, y, prob.row_mut(i));
    }

    let weight = match &frozen.weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::StaleForward);
            }
            w.clone()
        }
        None if spec.variant.uses_focal() => (0..n)
            .map(|i| focal_weight(prob[(i, labels[i])], spec.mining.gamma))
            .collect(),
        None if spec.variant.uses_hard_mining() => hm_select(&ce, spec.mining.hard_fraction)
            .into_iter()
            .map(|keep| if keep { 1.0 } else { 0.0 })
            .collect(),
        None => vec![1.0; n],
    };

    let loss = ce.iter().zip(&weight).map(|(c, w)| w * c).collect();
    Ok(ForwardOutput {
        loss,
        cross_entropy: ce,
        weight,
        prob,
        adjusted_logits: logits,
        mask,
    })
}

/// Writes softmax probabilities of `logits` into `prob` and returns `−log prob[target]`.
///
/// Subtracts the row maximum and uses `ln_1p` on the off-maximum mass, so a
/// confidently correct sample keeps full relative precision in its loss.
fn stable_softmax(logits: &[f64], target: usize, prob: &mut [f64]) -> f64 {
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(ai, am), (i, z)| {
            if z > am {
                (i, z)
            } else {
                (ai, am)
            }
        });
    let mut rest = 0.0;
    for (j, (&z, p)) in logits.iter().zip(prob.iter_mut()).enumerate() {
        let e = libm::exp(z - max);
        *p = e;
        if j != arg {
            rest += e;
        }
    }
    let total = 1.0 + rest;
    for p in prob.iter_mut() {
        *p /= total;
    }
    (max - logits[target]) + libm::log1p(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(rows: &[[f64; 2]]) -> CosineMatrix {
        CosineMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let out = softmax_forward(&cos(&[[1.0, -1.0]]), &[0], 30.0).unwrap();
        let expected = libm::log1p(libm::exp(-60.0));
        assert!((out.loss[0] - expected).abs() <= 1e-40);
        assert!((out.loss[0] / 8.75e-27 - 1.0).abs() < 1e-2);

        for s in [0.5, 1.0, 30.0, 64.0] {
            let out = softmax_forward(&cos(&[[0.3, 0.3]]), &[0], s).unwrap();
            assert!((out.loss[0] - core::f64::consts::LN_2).abs() < 1e-15);
        }

        let out = softmax_forward(&cos(&[[0.5, 0.8]]), &[0], 1.0).unwrap();
        assert!((out.loss[0] - 0.854_355_244_468_527).abs() < 1e-12);
        assert!(out.mask.count() == 0);
    }

    #[test]
    fn sv_softmax_examples() {
        let out = sv_softmax_forward(&cos(&[[0.5, 0.8]]), &[0], SvParams::new(1.0, 2.0)).unwrap();
        // masked logit 2·0.8 + 2 − 1 = 2.6, target 0.5
        assert!((out.adjusted_logits[(0, 1)] - 2.6).abs() < 1e-15);
        assert!((out.loss[0] - 2.215_519_523_179_755).abs() < 1e-12);

        let easy = cos(&[[0.9, 0.2]]);
        for t in [1.0, 1.2, 1.4, 2.0] {
            let sv = sv_softmax_forward(&easy, &[0], SvParams::new(30.0, t)).unwrap();
            let plain = softmax_forward(&easy, &[0], 30.0).unwrap();
            assert_eq!(sv.loss, plain.loss);
        }
    }

    #[test]
    fn sv_x_softmax_example() {
        let out = sv_x_softmax_forward(
            &cos(&[[0.5, 0.2]]),
            &[0],
            SvParams::new(1.0, 1.2),
            MarginParams::am(0.35),
        )
        .unwrap();
        assert!(out.mask.get(0, 1));
        assert!((out.loss[0] - 0.848_623_048_234_425).abs() < 1e-12);
    }

    #[test]
    fn naive_focal_example() {
        // margin probability 0.75: target logit 0.15·s against one other logit
        // with exp(z_y)/(exp(z_y)+exp(z_k)) = 0.75 → z_k = z_y − ln 3
        let s = 1.0;
        let other = 0.15 - libm::log(3.0);
        let c = CosineMatrix::from_rows(&[[0.5, other]]).unwrap();
        let spec = LossSpec::naive_focal(s, MarginParams::am(0.35), 2.0);
        let out = mining_margin_forward(&c, &[0], &spec).unwrap();
        assert!((out.prob[(0, 0)] - 0.75).abs() < 1e-15);
        assert!((out.weight[0] - 0.0625).abs() < 1e-15);
        assert!((out.loss[0] - 0.017_980_129_528_236_3).abs() < 1e-12);
    }

    #[test]
    fn mining_forward_rejects_other_variants() {
        let c = cos(&[[0.5, 0.2]]);
        assert!(mining_margin_forward(&c, &[0], &LossSpec::softmax(30.0)).is_err());
    }

    #[test]
    fn unread_groups_must_be_identity() {
        let mut spec = LossSpec::softmax(30.0);
        spec.sv.t = 1.2;
        assert!(spec.validate().is_err());
        let mut spec = LossSpec::sv(30.0, 1.2);
        spec.margin = MarginParams::am(0.35);
        assert!(spec.validate().is_err());
        for v in LossVariant::ALL {
            LossSpec::with_defaults(v).validate().unwrap();
        }
    }

    #[test]
    fn names() {
        let am = MarginParams::am(0.35);
        assert_eq!(LossSpec::sv_x(30.0, 1.2, am).name(), "SV-AM-Softmax");
        assert_eq!(
            LossSpec::naive_hm(30.0, MarginParams::arc(0.5), 0.7).name(),
            "HM-Arc-Softmax"
        );
        assert_eq!(LossSpec::softmax(30.0).name(), "Softmax");
        assert_eq!(LossSpec::margin(30.0, am).name(), "AM-Softmax");
    }

    #[test]
    fn variant_keys_round_trip() {
        for v in LossVariant::ALL {
            assert_eq!(LossVariant::from_key(v.key()), Some(v));
        }
    }
}
