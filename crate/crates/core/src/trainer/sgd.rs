use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// SGD with classical momentum and L2 weight decay:
/// `b ← μ·b + g + λ_wd·p`, then `p ← p − lr·b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    pub fn step(&mut self, lr: f64, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient tensors per parameter tensor",
                expected: params.len(),
                found: grads.len(),
            });
        }
        if self.buffers.is_empty() {
            self.buffers = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), b) in params.into_iter().zip(grads).zip(&mut self.buffers) {
            if p.len() != g.len() || p.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    context: "gradient entries per parameter",
                    expected: p.len(),
                    found: g.len(),
                });
            }
            for ((p, &g), b) in p.iter_mut().zip(g).zip(b.iter_mut()) {
                *b = self.momentum * *b + g + self.weight_decay * *p;
                *p -= lr * *b;
            }
        }
        Ok(())
    }
}
