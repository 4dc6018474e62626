use proptest::prelude::*;
use svsoftmax_core::eval::{angular_stats, build_pairs};
use svsoftmax_core::{
    cosine_logits, full_backward, h_indicator, loss_backward, loss_forward, margin_f, normalize_backward,
    normalize_rows, rank1_identification, sv_mask, sv_x_mask, tpr_at_far, CosineMatrix, FeatureBatch,
    LossSpec, LossVariant, MarginParams, Matrix, PairSet, WeightMatrix,
};

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(move |(r, c)| {
        prop::collection::vec(lo..hi, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

fn nonzero_rows(m: &Matrix) -> bool {
    m.iter_rows().all(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-3)
}

/// Cosine matrix with labels, at most 16 samples and 10 classes.
fn cos_batch() -> impl Strategy<Value = (CosineMatrix, Vec<usize>)> {
    (1usize..=16, 2usize..=10).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(-1.0f64..=1.0, n * k),
            prop::collection::vec(0..k, n),
        )
            .prop_map(move |(d, y)| (CosineMatrix::new(Matrix::from_vec(n, k, d).unwrap()), y))
    })
}

fn margin() -> impl Strategy<Value = MarginParams> {
    prop_oneof![
        (0.0f64..0.99).prop_map(MarginParams::am),
        (0.0f64..1.5).prop_map(MarginParams::arc),
        (1.0f64..4.0).prop_map(MarginParams::angular),
        (1.0f64..3.0, 0.0f64..0.99, 0.0f64..1.5).prop_map(|(a, b, c)| MarginParams::new(a, b, c)),
    ]
}

fn losses(cos: &CosineMatrix, y: &[usize], spec: &LossSpec) -> Vec<f64> {
    loss_forward(cos, y, spec).unwrap().loss
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) -> Result<(), TestCaseError> {
    for (x, z) in a.iter().zip(b) {
        prop_assert!((x - z).abs() <= tol, "{x} vs {z}");
    }
    Ok(())
}

proptest! {
    #[test]
    fn normalize_is_idempotent_and_scale_invariant(m in matrix(1..=6, 2..=6, -5.0, 5.0), c in 0.01f64..100.0) {
        prop_assume!(nonzero_rows(&m));
        let once = normalize_rows(&m).unwrap();
        let twice = normalize_rows(&once).unwrap();
        let mut scaled = m.clone();
        scaled.as_mut_slice().iter_mut().for_each(|v| *v *= c);
        let scaled = normalize_rows(&scaled).unwrap();
        assert_close(once.as_slice(), twice.as_slice(), 1e-12)?;
        assert_close(once.as_slice(), scaled.as_slice(), 1e-12)?;
        for r in once.iter_rows() {
            prop_assert!((r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_backward_matches_differences_and_is_tangent(
        dir in prop::collection::vec(-1.0f64..1.0, 2..=6),
        len in 0.1f64..10.0,
        g_seed in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(n > 1e-2);
        let v: Vec<f64> = dir.iter().map(|x| x / n * len).collect();
        let g = &g_seed[..v.len()];
        let grad = normalize_backward(&v, g).unwrap();
        let dot: f64 = grad.iter().zip(&v).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() < 1e-10);
        let objective = |v: &[f64]| {
            let m = Matrix::from_vec(1, v.len(), v.to_vec()).unwrap();
            let u = normalize_rows(&m).unwrap();
            u.row(0).iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        let scale = grad.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for d in 0..v.len() {
            let mut p = v.clone();
            let mut m = v.clone();
            p[d] += h;
            m[d] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            prop_assert!((fd - grad[d]).abs() <= 1e-6 * scale.max(1e-8) + 1e-9, "dim {d}: {fd} vs {}", grad[d]);
        }
    }

    #[test]
    fn cosines_stay_in_range(x in matrix(1..=5, 3..=3, -3.0, 3.0), w in matrix(2..=5, 3..=3, -3.0, 3.0)) {
        prop_assume!(nonzero_rows(&x) && nonzero_rows(&w));
        let cos = cosine_logits(&normalize_rows(&x).unwrap(), &normalize_rows(&w).unwrap()).unwrap();
        prop_assert!(cos.matrix().as_slice().iter().all(|c| c.abs() <= 1.0));
    }

    #[test]
    fn reduction_web((cos, y) in cos_batch(), s in 1.0f64..64.0, m in margin()) {
        let base = losses(&cos, &y, &LossSpec::softmax(s));
        let id = MarginParams::IDENTITY;
        for spec in [
            LossSpec::sv(s, 1.0),
            LossSpec::sv_x(s, 1.0, id),
            LossSpec::focal(s, 0.0),
            LossSpec::hard_mining(s, 1.0),
            LossSpec::naive_focal(s, id, 0.0),
            LossSpec::naive_hm(s, id, 1.0),
        ] {
            assert_close(&losses(&cos, &y, &spec), &base, 1e-12)?;
        }
        assert_close(&losses(&cos, &y, &LossSpec::sv_x(s, 1.0, m)), &losses(&cos, &y, &LossSpec::margin(s, m)), 1e-12)?;
    }

    #[test]
    fn probabilities_are_stochastic_and_losses_finite((cos, y) in cos_batch(), s in 0.5f64..=64.0, t in 1.0f64..2.0, m in margin(), vi in 0usize..8) {
        let spec = match LossVariant::ALL[vi] {
            LossVariant::Softmax => LossSpec::softmax(s),
            LossVariant::FocalSoftmax => LossSpec::focal(s, 2.0),
            LossVariant::HmSoftmax => LossSpec::hard_mining(s, 0.7),
            LossVariant::MarginSoftmax => LossSpec::margin(s, m),
            LossVariant::NaiveFusedFocal => LossSpec::naive_focal(s, m, 2.0),
            LossVariant::NaiveFusedHm => LossSpec::naive_hm(s, m, 0.7),
            LossVariant::SvSoftmax => LossSpec::sv(s, t),
            LossVariant::SvxSoftmax => LossSpec::sv_x(s, t, m),
        };
        let out = loss_forward(&cos, &y, &spec).unwrap();
        for (i, row) in out.prob.iter_rows().enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(out.loss[i].is_finite() && out.loss[i] >= 0.0);
            prop_assert!((out.cross_entropy[i] + row[y[i]].ln()).abs() < 1e-10 || row[y[i]] < 1e-300);
            prop_assert!(!out.mask.get(i, y[i]));
        }
    }

    #[test]
    fn class_permutation_equivariance((cos, y) in cos_batch(), s in 1.0f64..64.0, t in 1.0f64..1.4, m in margin(), rot in 1usize..10) {
        let k = cos.classes();
        let perm: Vec<usize> = (0..k).map(|c| (c + rot) % k).collect();
        let mut data = Matrix::zeros(cos.samples(), k);
        for i in 0..cos.samples() {
            for c in 0..k {
                data.row_mut(i)[perm[c]] = cos.get(i, c);
            }
        }
        let permuted = CosineMatrix::new(data);
        let py: Vec<usize> = y.iter().map(|&c| perm[c]).collect();
        let spec = LossSpec::sv_x(s, t, m);
        let a = loss_forward(&cos, &y, &spec).unwrap();
        let b = loss_forward(&permuted, &py, &spec).unwrap();
        assert_close(&a.loss, &b.loss, 1e-12)?;
        for i in 0..cos.samples() {
            for c in 0..k {
                prop_assert!((a.prob.row(i)[c] - b.prob.row(i)[perm[c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masks_match_direct_inequalities((cos, y) in cos_batch(), m in margin()) {
        let plain = sv_mask(&cos, &y).unwrap();
        let marg = sv_x_mask(&cos, &y, m).unwrap();
        for (i, &yi) in y.iter().enumerate() {
            let f = margin_f(cos.get(i, yi), m).unwrap();
            for k in 0..cos.classes() {
                prop_assert_eq!(plain.get(i, k), k != yi && cos.get(i, yi) - cos.get(i, k) < 0.0);
                prop_assert_eq!(marg.get(i, k), k != yi && f - cos.get(i, k) < 0.0);
            }
        }
        prop_assert_eq!(sv_x_mask(&cos, &y, MarginParams::IDENTITY).unwrap(), plain);
    }

    #[test]
    fn margin_chain(c in -1.0f64..=1.0, m in margin(), t in 1.0f64..3.0) {
        prop_assert!(margin_f(c, m).unwrap() <= c + 1e-12);
        let folded = t * c + t - 1.0;
        prop_assert!(folded >= c);
        if t > 1.0 && c > -1.0 {
            prop_assert!(folded > c);
        }
    }

    #[test]
    fn margin_f_is_monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0, m in margin()) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(margin_f(lo, m).unwrap() <= margin_f(hi, m).unwrap() + 1e-12);
    }

    #[test]
    fn h_at_least_one_and_monotone_in_t(c in -1.0f64..=1.0, s in 0.1f64..64.0, t in 1.0f64..2.0, dt in 0.0f64..0.5) {
        prop_assert!(h_indicator(c, true, s, t) >= 1.0);
        prop_assert_eq!(h_indicator(c, false, s, t), 1.0);
        prop_assert!(h_indicator(c, true, s, t + dt) >= h_indicator(c, true, s, t));
    }

    #[test]
    fn sv_loss_emphasizes_masked_samples((cos, y) in cos_batch(), s in 1.0f64..64.0, t in 1.0f64..1.4) {
        let sv = loss_forward(&cos, &y, &LossSpec::sv(s, t)).unwrap();
        let base = losses(&cos, &y, &LossSpec::softmax(s));
        for i in 0..y.len() {
            if sv.mask.row_is_empty(i) || t == 1.0 {
                prop_assert!((sv.loss[i] - base[i]).abs() <= 1e-12);
            } else {
                prop_assert!(sv.loss[i] > base[i]);
            }
        }
    }

    #[test]
    fn gradient_row_sums((cos, y) in cos_batch(), s in 1.0f64..64.0, t in 1.0f64..1.4) {
        let n = y.len() as f64;
        for spec in [LossSpec::softmax(s), LossSpec::sv(s, t)] {
            let fwd = loss_forward(&cos, &y, &spec).unwrap();
            let d = loss_backward(&cos, &y, &spec, &fwd).unwrap();
            for i in 0..y.len() {
                let expected: f64 = (0..cos.classes())
                    .filter(|&k| fwd.mask.get(i, k))
                    .map(|k| s * (spec.sv.t - 1.0) * fwd.prob.row(i)[k] / n)
                    .sum();
                let sum: f64 = d.row(i).iter().sum();
                prop_assert!((sum - expected).abs() < 1e-10, "{sum} vs {expected}");
            }
        }
    }

    #[test]
    fn ground_truth_gradient_non_positive((cos, y) in cos_batch(), s in 1.0f64..64.0, t in 1.0f64..1.4, m in margin(), vi in 0usize..8, diff in any::<bool>()) {
        let mut spec = LossSpec::with_defaults(LossVariant::ALL[vi]);
        spec.sv.s = s;
        if spec.variant.uses_t() {
            spec.sv.t = t;
        }
        if spec.variant.uses_margin() {
            spec.margin = m;
        }
        spec.differentiate_focal_weight = diff && spec.variant.uses_focal();
        let fwd = loss_forward(&cos, &y, &spec).unwrap();
        let d = loss_backward(&cos, &y, &spec, &fwd).unwrap();
        for (i, &yi) in y.iter().enumerate() {
            if fwd.prob.row(i)[yi] < 1.0 {
                prop_assert!(d.row(i)[yi] <= 0.0, "sample {i}: {}", d.row(i)[yi]);
            }
        }
    }

    #[test]
    fn masked_entries_carry_factor_t((cos, y) in cos_batch(), s in 1.0f64..64.0, t in 1.0f64..1.4, m in margin()) {
        let n = y.len() as f64;
        for spec in [LossSpec::sv(s, t), LossSpec::sv_x(s, t, m)] {
            let fwd = loss_forward(&cos, &y, &spec).unwrap();
            let d = loss_backward(&cos, &y, &spec, &fwd).unwrap();
            for i in 0..y.len() {
                for k in (0..cos.classes()).filter(|&k| fwd.mask.get(i, k)) {
                    let unit = s * fwd.prob.row(i)[k] / n;
                    prop_assert!((d.row(i)[k] - t * unit).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn raw_gradients_are_tangent(x in matrix(2..=6, 3..=3, -2.0, 2.0), w in matrix(3..=3, 3..=3, -2.0, 2.0), t in 1.0f64..1.4) {
        prop_assume!(nonzero_rows(&x) && nonzero_rows(&w));
        let labels: Vec<usize> = (0..x.rows()).map(|i| i % 3).collect();
        let batch = FeatureBatch::new(x.clone(), labels, 3).unwrap();
        let w = WeightMatrix::raw(w);
        let (_, b) = full_backward(&batch, &w, &LossSpec::sv(30.0, t)).unwrap();
        for (g, v) in b.d_features.iter_rows().zip(x.iter_rows()).chain(b.d_weights.iter_rows().zip(w.data.iter_rows())) {
            let dot: f64 = g.iter().zip(v).map(|(a, c)| a * c).sum();
            let scale = g.iter().map(|a| a.abs()).sum::<f64>() * v.iter().map(|a| a.abs()).sum::<f64>();
            prop_assert!(dot.abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn tpr_monotone_in_far(
        genuine in prop::collection::vec(-1.0f64..=1.0, 1..100),
        impostor in prop::collection::vec(-1.0f64..=1.0, 1..100),
        a in 0.001f64..=1.0,
        b in 0.001f64..=1.0,
    ) {
        let pairs = PairSet { genuine, impostor };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (t_lo, r_lo) = tpr_at_far(&pairs, lo).unwrap();
        let (t_hi, r_hi) = tpr_at_far(&pairs, hi).unwrap();
        prop_assert!(r_lo <= r_hi);
        prop_assert!(t_hi <= t_lo);
        prop_assert!((0.0..=1.0).contains(&r_lo));
    }

    #[test]
    fn tpr_matches_brute_force(
        genuine in prop::collection::vec((-10i32..=10).prop_map(|v| v as f64 / 10.0), 1..100),
        impostor in prop::collection::vec((-10i32..=10).prop_map(|v| v as f64 / 10.0), 1..100),
        far in 0.001f64..=1.0,
    ) {
        let pairs = PairSet { genuine, impostor };
        let mut best = f64::INFINITY;
        for &tau in &pairs.impostor {
            let fa = pairs.impostor.iter().filter(|&&s| s >= tau).count() as f64 / pairs.impostor.len() as f64;
            if fa <= far && tau < best {
                best = tau;
            }
        }
        let tpr = pairs.genuine.iter().filter(|&&s| s >= best).count() as f64 / pairs.genuine.len() as f64;
        prop_assert_eq!(tpr_at_far(&pairs, far).unwrap(), (best, tpr));
    }

    #[test]
    fn rank1_rotation_invariant(
        gallery in matrix(1..=12, 2..=2, -1.0, 1.0),
        probes in matrix(1..=8, 2..=2, -1.0, 1.0),
        angle in 0.0f64..std::f64::consts::TAU,
        labels in prop::collection::vec(0usize..3, 20),
    ) {
        prop_assume!(nonzero_rows(&gallery) && nonzero_rows(&probes));
        let (c, s) = (angle.cos(), angle.sin());
        let rotate = |m: &Matrix| {
            let mut r = m.clone();
            for i in 0..m.rows() {
                let (x, y) = (m.row(i)[0], m.row(i)[1]);
                r.row_mut(i).copy_from_slice(&[c * x - s * y, s * x + c * y]);
            }
            r
        };
        // skip near-tied instances, where rounding may flip the winner
        let cosv = |a: &[f64], b: &[f64]| (a[0] * b[0] + a[1] * b[1]) / ((a[0].hypot(a[1])) * (b[0].hypot(b[1])));
        for p in probes.iter_rows() {
            let mut scores: Vec<f64> = gallery.iter_rows().map(|g| cosv(p, g)).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(scores.len() < 2 || scores[0] - scores[1] > 1e-9);
        }
        let gl = &labels[..gallery.rows()];
        let pl = &labels[..probes.rows()];
        let before = rank1_identification(&gallery, gl, &probes, pl).unwrap();
        let after = rank1_identification(&rotate(&gallery), gl, &rotate(&probes), pl).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn angles_in_range(e in matrix(3..=10, 3..=3, -1.0, 1.0), w in matrix(3..=3, 3..=3, -1.0, 1.0)) {
        prop_assume!(nonzero_rows(&e) && nonzero_rows(&w));
        let labels: Vec<usize> = (0..e.rows()).map(|i| i % 3).collect();
        let (intra, inter) = angular_stats(&e, &labels, &WeightMatrix::raw(w)).unwrap();
        prop_assert!((0.0..=std::f64::consts::PI).contains(&intra));
        prop_assert!((0.0..=std::f64::consts::PI).contains(&inter));
    }

    #[test]
    fn pair_scores_in_range(e in matrix(4..=12, 3..=3, -1.0, 1.0), seed in any::<u64>()) {
        prop_assume!(nonzero_rows(&e));
        let labels: Vec<usize> = (0..e.rows()).map(|i| i % 2).collect();
        let pairs = build_pairs(&e, &labels, 5, seed).unwrap();
        prop_assert!(pairs.genuine.len() <= 5 && pairs.impostor.len() <= 5);
        prop_assert!(pairs.genuine.iter().chain(&pairs.impostor).all(|s| (-1.0..=1.0).contains(s)));
        prop_assert_eq!(build_pairs(&e, &labels, 5, seed).unwrap(), pairs);
    }
}
