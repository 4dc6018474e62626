use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synthetic::unit_vector;
use crate::error::{Error, Result};
use crate::geometry::{normalize_rows, FeatureBatch, WeightMatrix};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Self::Relu => v.max(0.0),
            Self::Identity => v,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Self::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Identity => 1.0,
        }
    }
}

/// Affine layer `y = W·x + b` with `W` stored `out × in`; `bias` may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Fully connected embedding network followed by a cosine classifier.
///
/// The activation sits between layers only; the last layer is linear, has no
/// bias, and its output is the raw embedding that the loss normalizes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub classifier: WeightMatrix,
}

/// Parameter gradients in the order of [`EmbeddingNet::parameters_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub tensors: Vec<Vec<f64>>,
}

pub(crate) struct Trace {
    /// Input of every layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Pre-activation output of every layer.
    pre: Vec<Matrix>,
}

impl EmbeddingNet {
    /// Seeded initialization for layer widths `[input, hidden…, embed]`.
    ///
    /// Weights are uniform in `±1/√fan_in`, hidden biases zero and classifier
    /// rows random unit vectors.
    pub fn new(widths: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter {
                name: "widths",
                reason: "need an input and an output width, all nonzero",
            });
        }
        if *widths.last().unwrap() < 2 || num_classes < 2 {
            return Err(Error::InvalidParameter {
                name: "widths",
                reason: "embedding width and class count must be >= 2",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / libm::sqrt(w[0] as f64);
                let data = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect();
                Ok(Dense {
                    weight: Matrix::from_vec(w[1], w[0], data)?,
                    bias: (i < last).then(|| vec![0.0; w[1]]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let embed = *widths.last().unwrap();
        let mut classifier = Matrix::zeros(num_classes, embed);
        for r in 0..num_classes {
            unit_vector(&mut rng, classifier.row_mut(r));
        }
        Ok(Self {
            layers,
            activation: Activation::Relu,
            classifier: WeightMatrix::raw(classifier),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// Layer widths `[input, hidden…, embed]`.
    pub fn widths(&self) -> Vec<usize> {
        core::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::fan_out))
            .collect()
    }

    /// Weight and (if present) bias slices of every layer, then the classifier.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
        }
        out.push(self.classifier.data.as_mut_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().flatten().all(|b| b.is_finite()))
            && self.classifier.data.is_finite()
    }

    /// Raw (unnormalized) embeddings of the rows of `x`.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_traced(x).map(|(out, _)| out)
    }

    pub(crate) fn forward_traced(&self, x: &Matrix) -> Result<(Matrix, Trace)> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input width",
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul_transposed(&layer.weight)?;
            if let Some(bias) = &layer.bias {
                for r in 0..z.rows() {
                    for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
                        *v += b;
                    }
                }
            }
            let next = if i == last {
                z.clone()
            } else {
                let mut a = z.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
                a
            };
            trace.inputs.push(h);
            trace.pre.push(z);
            h = next;
        }
        Ok((h, trace))
    }

    /// Backpropagates `∂L/∂embedding` through the layers. The classifier
    /// slot is filled with `d_classifier`.
    pub(crate) fn backward(&self, trace: &Trace, d_out: &Matrix, d_classifier: Matrix) -> Result<NetGradients> {
        let mut per_layer = vec![Vec::new(); self.layers.len()];
        let mut delta = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            let d_w = delta.transpose().matmul(&trace.inputs[i])?;
            per_layer[i].push(d_w.into_vec());
            if self.layers[i].bias.is_some() {
                let mut d_b = vec![0.0; delta.cols()];
                for r in delta.iter_rows() {
                    for (acc, v) in d_b.iter_mut().zip(r) {
                        *acc += v;
                    }
                }
                per_layer[i].push(d_b);
            }
            if i > 0 {
                let mut prev = delta.matmul(&self.layers[i].weight)?;
                for (v, &z) in prev.as_mut_slice().iter_mut().zip(trace.pre[i - 1].as_slice()) {
                    *v *= self.activation.derivative(z);
                }
                delta = prev;
            }
        }
        let mut tensors: Vec<Vec<f64>> = per_layer.into_iter().flatten().collect();
        tensors.push(d_classifier.into_vec());
        Ok(NetGradients { tensors })
    }
}

/// Unit-norm embeddings of every sample, with the labels carried over.
pub fn evaluate_model(model: &EmbeddingNet, data: &FeatureBatch) -> Result<FeatureBatch> {
    let raw = model.embed(&data.data)?;
    FeatureBatch::new(normalize_rows(&raw)?, data.labels.clone(), data.num_classes)
}
