use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{FeatureBatch, NORM_FLOOR};
use crate::matrix::{dot, l2_norm, Matrix};

/// Center pairs at or above this cosine are resampled.
pub const MAX_CENTER_COSINE: f64 = 0.99;
pub const CENTER_ATTEMPTS: usize = 100;

/// Gaussian clusters around unit-norm class centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub ambient_dim: usize,
    pub embed_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &'static str, &'static str); 5] = [
            (self.num_classes >= 2, "num_classes", "must be >= 2"),
            (self.samples_per_class >= 2, "samples_per_class", "must be >= 2"),
            (self.ambient_dim >= 2, "ambient_dim", "must be >= 2"),
            (self.embed_dim >= 2, "embed_dim", "must be >= 2"),
            (
                self.noise_sigma.is_finite() && self.noise_sigma > 0.0,
                "noise_sigma",
                "must be finite and > 0",
            ),
        ];
        for (ok, name, reason) in checks {
            if !ok {
                return Err(Error::InvalidParameter { name, reason });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: FeatureBatch,
    pub test: FeatureBatch,
    /// Unit class centers, `K × ambient_dim`.
    pub centers: Matrix,
}

/// Draws the class centers and samples, then splits each class in two.
///
/// The first `⌈n/2⌉` samples of every class go to the training split, the
/// rest to the test split; both splits are ordered by class.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (k, d) = (spec.num_classes, spec.ambient_dim);

    let centers = (0..CENTER_ATTEMPTS)
        .map(|_| {
            let mut c = Matrix::zeros(k, d);
            for r in 0..k {
                unit_vector(&mut rng, c.row_mut(r));
            }
            c
        })
        .find(centers_are_separated)
        .ok_or(Error::CenterCollision { attempts: CENTER_ATTEMPTS })?;

    let n_train = spec.samples_per_class.div_ceil(2);
    let n_test = spec.samples_per_class - n_train;
    let mut train = Vec::with_capacity(k * n_train * d);
    let mut test = Vec::with_capacity(k * n_test * d);
    for class in 0..k {
        for s in 0..spec.samples_per_class {
            let out = if s < n_train { &mut train } else { &mut test };
            for &c in centers.row(class) {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.push(c + spec.noise_sigma * z);
            }
        }
    }
    let labels = |per: usize| (0..k).flat_map(|c| core::iter::repeat_n(c, per)).collect();
    Ok(SyntheticData {
        train: FeatureBatch::new(Matrix::from_vec(k * n_train, d, train)?, labels(n_train), k)?,
        test: FeatureBatch::new(Matrix::from_vec(k * n_test, d, test)?, labels(n_test), k)?,
        centers,
    })
}

/// Fills `out` with a uniformly distributed unit vector.
pub(crate) fn unit_vector(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let n = l2_norm(out);
        if n > NORM_FLOOR {
            out.iter_mut().for_each(|v| *v /= n);
            return;
        }
    }
}

fn centers_are_separated(c: &Matrix) -> bool {
    (0..c.rows()).all(|a| (a + 1..c.rows()).all(|b| dot(c.row(a), c.row(b)) < MAX_CENTER_COSINE))
}

/// Fraction of samples whose nearest center (Euclidean) carries their label.
/// Ties go to the lower class index.
pub fn nearest_center_accuracy(batch: &FeatureBatch, centers: &Matrix) -> f64 {
    let hits = batch
        .data
        .iter_rows()
        .zip(&batch.labels)
        .filter(|(x, &y)| {
            let mut best = (0, f64::INFINITY);
            for (k, c) in centers.iter_rows().enumerate() {
                let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.1 {
                    best = (k, d2);
                }
            }
            best.0 == y
        })
        .count();
    hits as f64 / batch.len() as f64
}
