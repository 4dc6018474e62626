//! Verification and identification metrics on embeddings.
//!
//! Similarities are cosines throughout, so inputs need not be normalized.
//! Verification follows the usual protocol: a pair is accepted when its
//! score is at least the threshold `τ`, and `τ` for a target false-accept
//! rate is the smallest impostor score (or `+∞`) whose false-accept rate
//! does not exceed the target.

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{FeatureBatch, WeightMatrix};
use crate::matrix::{dot, l2_norm, Matrix};

pub const DEFAULT_PAIR_CAP: usize = 10_000;

/// Scores of same-class (genuine) and cross-class (impostor) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TprPoint {
    pub far: f64,
    pub threshold: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tpr_at_far: Vec<TprPoint>,
    pub rank1: f64,
    pub mean_intra_angle: f64,
    pub min_inter_center_angle: f64,
}

/// A requested false-accept target raised to the smallest resolvable rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarClamp {
    pub requested: f64,
    pub used: f64,
}

/// Cosine of two vectors, clamped to `[−1, 1]`; 0 if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = l2_norm(a) * l2_norm(b);
    if n == 0.0 {
        return 0.0;
    }
    (dot(a, b) / n).clamp(-1.0, 1.0)
}

/// Scores all same-class and cross-class pairs `i < j`, keeping at most
/// `max_pairs_per_kind` of each.
///
/// Larger sets are subsampled without replacement from a seeded stream; the
/// kept pairs stay in `(i, j)` lexicographic order.
pub fn build_pairs(
    embeddings: &Matrix,
    labels: &[usize],
    max_pairs_per_kind: usize,
    seed: u64,
) -> Result<PairSet> {
    if labels.len() != embeddings.rows() {
        return Err(Error::DimensionMismatch {
            context: "labels per embedding",
            expected: embeddings.rows(),
            found: labels.len(),
        });
    }
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                genuine.push((i, j));
            } else {
                impostor.push((i, j));
            }
        }
    }
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InsufficientData(
            "need a class with two samples and at least two classes",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut score = |pairs: Vec<(usize, usize)>| -> Vec<f64> {
        let kept: Vec<(usize, usize)> = if pairs.len() > max_pairs_per_kind {
            let mut picks = index::sample(&mut rng, pairs.len(), max_pairs_per_kind).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|p| pairs[p]).collect()
        } else {
            pairs
        };
        kept.into_iter()
            .map(|(i, j)| cosine(embeddings.row(i), embeddings.row(j)))
            .collect()
    };
    let genuine = score(genuine);
    let impostor = score(impostor);
    Ok(PairSet { genuine, impostor })
}

fn descending(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    s
}

/// Number of entries of a descending slice that are `≥ tau`.
fn count_at_least(desc: &[f64], tau: f64) -> usize {
    desc.partition_point(|&v| v >= tau)
}

/// Operating threshold and true-positive rate at a false-accept target.
///
/// Returns `τ = +∞` (and TPR 0) when even the largest impostor score admits
/// too many false accepts.
pub fn tpr_at_far(pairs: &PairSet, far_target: f64) -> Result<(f64, f64)> {
    if !(far_target > 0.0 && far_target <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "far_target",
            reason: "must lie in (0, 1]",
        });
    }
    if pairs.impostor.is_empty() || pairs.genuine.is_empty() {
        return Err(Error::InsufficientData("tpr_at_far needs genuine and impostor scores"));
    }
    let imp = descending(&pairs.impostor);
    let n = imp.len() as f64;
    let mut tau = f64::INFINITY;
    let mut k = 0;
    while k < imp.len() {
        let v = imp[k];
        let accepted = count_at_least(&imp, v);
        if accepted as f64 / n > far_target {
            break;
        }
        tau = v;
        k = accepted;
    }
    let gen = descending(&pairs.genuine);
    Ok((tau, count_at_least(&gen, tau) as f64 / gen.len() as f64))
}

/// Raises `far_target` to at least `1/|impostor|`, the smallest nonzero rate
/// the pair set can resolve.
pub fn clamp_far(pairs: &PairSet, far_target: f64) -> FarClamp {
    let floor = 1.0 / pairs.impostor.len().max(1) as f64;
    FarClamp {
        requested: far_target,
        used: far_target.max(floor),
    }
}

/// One point per distinct observed score, from the strictest threshold down.
pub fn roc_curve(pairs: &PairSet) -> Vec<RocPoint> {
    let imp = descending(&pairs.impostor);
    let gen = descending(&pairs.genuine);
    let mut all = descending(&[pairs.genuine.as_slice(), pairs.impostor.as_slice()].concat());
    all.dedup();
    all.into_iter()
        .map(|tau| RocPoint {
            threshold: tau,
            far: count_at_least(&imp, tau) as f64 / imp.len().max(1) as f64,
            tpr: count_at_least(&gen, tau) as f64 / gen.len().max(1) as f64,
        })
        .collect()
}

/// Fraction of probes whose most similar gallery entry has the same label.
/// Ties go to the lower gallery index.
pub fn rank1_identification(
    gallery: &Matrix,
    gallery_labels: &[usize],
    probes: &Matrix,
    probe_labels: &[usize],
) -> Result<f64> {
    if gallery.rows() == 0 || probes.rows() == 0 {
        return Err(Error::InsufficientData("rank-1 needs a gallery and probes"));
    }
    if gallery_labels.len() != gallery.rows() || probe_labels.len() != probes.rows() {
        return Err(Error::DimensionMismatch {
            context: "labels per embedding",
            expected: gallery.rows(),
            found: gallery_labels.len(),
        });
    }
    if gallery.cols() != probes.cols() {
        return Err(Error::DimensionMismatch {
            context: "gallery vs. probe width",
            expected: gallery.cols(),
            found: probes.cols(),
        });
    }
    let hits = probes
        .iter_rows()
        .zip(probe_labels)
        .filter(|(p, &label)| {
            let mut best = (0, f64::NEG_INFINITY);
            for (g, row) in gallery.iter_rows().enumerate() {
                let c = cosine(p, row);
                if c > best.1 {
                    best = (g, c);
                }
            }
            gallery_labels[best.0] == label
        })
        .count();
    Ok(hits as f64 / probes.rows() as f64)
}

/// Mean angle between each embedding and its class weight, and the smallest
/// angle between two class weights, both in radians.
pub fn angular_stats(embeddings: &Matrix, labels: &[usize], w: &WeightMatrix) -> Result<(f64, f64)> {
    if labels.len() != embeddings.rows() {
        return Err(Error::DimensionMismatch {
            context: "labels per embedding",
            expected: embeddings.rows(),
            found: labels.len(),
        });
    }
    if embeddings.rows() == 0 {
        return Err(Error::InsufficientData("angular statistics need embeddings"));
    }
    if w.data.cols() != embeddings.cols() {
        return Err(Error::DimensionMismatch {
            context: "class weight width",
            expected: embeddings.cols(),
            found: w.data.cols(),
        });
    }
    crate::geometry::check_labels(labels, w.num_classes())?;
    let intra = embeddings
        .iter_rows()
        .zip(labels)
        .map(|(e, &y)| libm::acos(cosine(e, w.data.row(y))))
        .sum::<f64>()
        / labels.len() as f64;
    let k = w.num_classes();
    let mut inter = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            inter = inter.min(libm::acos(cosine(w.data.row(a), w.data.row(b))));
        }
    }
    Ok((intra, inter))
}

/// Splits each class of `batch` into a gallery (first `⌈n/2⌉` samples, in
/// order) and probes (the rest). Returns `(gallery, probes)` row indices.
pub fn gallery_probe_split(labels: &[usize], num_classes: usize) -> (Vec<usize>, Vec<usize>) {
    let mut counts = alloc::vec![0usize; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let mut seen = alloc::vec![0usize; num_classes];
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        if seen[y] < counts[y].div_ceil(2) {
            gallery.push(i);
        } else {
            probes.push(i);
        }
        seen[y] += 1;
    }
    (gallery, probes)
}

/// Full held-out evaluation of `embeddings` against the classifier `w`.
///
/// Returns the report, the pair scores it was computed from and any FAR
/// targets that had to be raised to `1/|impostor|`.
pub fn evaluate_embeddings(
    embeddings: &FeatureBatch,
    w: &WeightMatrix,
    far_targets: &[f64],
    max_pairs_per_kind: usize,
    seed: u64,
) -> Result<(EvalReport, PairSet, Vec<FarClamp>)> {
    let pairs = build_pairs(&embeddings.data, &embeddings.labels, max_pairs_per_kind, seed)?;
    let mut clamps = Vec::new();
    let mut points = Vec::with_capacity(far_targets.len());
    for &far in far_targets {
        let c = clamp_far(&pairs, far);
        if c.used != c.requested {
            clamps.push(c);
        }
        let (threshold, tpr) = tpr_at_far(&pairs, c.used)?;
        points.push(TprPoint { far: c.used, threshold, tpr });
    }
    let (g, p) = gallery_probe_split(&embeddings.labels, embeddings.num_classes);
    if p.is_empty() {
        return Err(Error::InsufficientData("every class needs two samples for rank-1"));
    }
    let gallery = embeddings.select(&g);
    let probes = embeddings.select(&p);
    let rank1 = rank1_identification(&gallery.data, &gallery.labels, &probes.data, &probes.labels)?;
    let (mean_intra_angle, min_inter_center_angle) = angular_stats(&embeddings.data, &embeddings.labels, w)?;
    Ok((
        EvalReport {
            tpr_at_far: points,
            rank1,
            mean_intra_angle,
            min_inter_center_angle,
        },
        pairs,
        clamps,
    ))
}
