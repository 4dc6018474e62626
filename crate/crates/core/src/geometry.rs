//! Unit normalization, cosine logits and the normalization Jacobian.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, Matrix};

/// Rows whose L2 norm does not exceed this value cannot be normalized.
pub const NORM_FLOOR: f64 = 1e-12;

/// Feature rows (`N × D`) with their integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub data: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl FeatureBatch {
    pub fn new(data: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::InsufficientData("feature batch has no samples"));
        }
        if data.cols() < 2 {
            return Err(Error::DimensionMismatch {
                context: "feature dimension (at least 2)",
                expected: 2,
                found: data.cols(),
            });
        }
        if labels.len() != data.rows() {
            return Err(Error::DimensionMismatch {
                context: "labels per sample",
                expected: data.rows(),
                found: labels.len(),
            });
        }
        check_labels(&labels, num_classes)?;
        Ok(Self {
            data,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    /// Copy with every feature row scaled to unit length.
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            data: normalize_rows(&self.data)?,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            data: self.data.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Classifier weights, one row per class (`K × D`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub data: Matrix,
    normalized: bool,
}

impl WeightMatrix {
    pub fn raw(data: Matrix) -> Self {
        Self {
            data,
            normalized: false,
        }
    }

    pub fn normalized_from(data: &Matrix) -> Result<Self> {
        Ok(Self {
            data: normalize_rows(data)?,
            normalized: true,
        })
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn num_classes(&self) -> usize {
        self.data.rows()
    }

    pub fn normalized(&self) -> Result<Self> {
        if self.normalized {
            return Ok(self.clone());
        }
        Self::normalized_from(&self.data)
    }
}

/// Per-sample, per-class cosine similarities (`N × K`), clamped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix(Matrix);

impl CosineMatrix {
    /// Wraps precomputed cosines, clamping every entry into `[-1, 1]`.
    pub fn new(mut m: Matrix) -> Self {
        for v in m.as_mut_slice() {
            *v = v.clamp(-1.0, 1.0);
        }
        Self(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Ok(Self::new(Matrix::from_rows(rows)?))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn samples(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.0[(i, k)]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        Some((sample, &label)) => Err(Error::InvalidLabel {
            sample,
            label,
            classes,
        }),
        None => Ok(()),
    }
}

/// Scales every row to unit L2 norm.
pub fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = l2_norm(row);
        if !(norm > NORM_FLOOR) {
            return Err(Error::DegenerateVector { row: i, norm });
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

/// Pairwise dot products of unit features and unit class weights, clamped to `[-1, 1]`.
pub fn cosine_logits(features: &Matrix, weights: &Matrix) -> Result<CosineMatrix> {
    if features.cols() != weights.cols() {
        return Err(Error::DimensionMismatch {
            context: "cosine_logits embedding dimension",
            expected: features.cols(),
            found: weights.cols(),
        });
    }
    Ok(CosineMatrix::new(features.matmul_transposed(weights)?))
}

/// Pulls `upstream = ∂L/∂u` back through `u = v / ‖v‖`.
///
/// The result is `(I − u uᵀ) · upstream / ‖v‖`, which is always orthogonal to `v`.
pub fn normalize_backward(v: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if v.len() != upstream.len() {
        return Err(Error::DimensionMismatch {
            context: "normalize_backward",
            expected: v.len(),
            found: upstream.len(),
        });
    }
    let norm = l2_norm(v);
    if !(norm > NORM_FLOOR) {
        return Err(Error::DegenerateVector { row: 0, norm });
    }
    let radial = dot(v, upstream) / norm;
    Ok(v
        .iter()
        .zip(upstream)
        .map(|(&vi, &gi)| (gi - radial * vi / norm) / norm)
        .collect())
}
