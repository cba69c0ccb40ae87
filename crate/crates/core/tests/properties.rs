use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tsvision::analysis::{mutual_knn, pca_components_for_variance, twonn_id, IdMethod};
use tsvision::dataset::{split_indices, synthetic_sine_pair};
use tsvision::embedding::{embed_dataset, read_archive, write_archive, MockEmbedder};
use tsvision::imaging::{front_pad_len, pad_front, patch_stack, robust_scale};
use tsvision::models::{lbfgs, loss_and_grad, LogisticRegression, NearestCentroid, TrainOptions};
use tsvision::theory::{is_label_relevant, satisfies_relevance_condition, tokens_2d, untokenize_2d};
use tsvision::{Aggregation, EmbeddingMatrix, PatchingConfig, Rational, Source};

fn gaussian(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

/// Random orthogonal matrix from Gram-Schmidt on a Gaussian draw.
fn rotation(seed: u64, n: usize) -> Array2<f64> {
    let mut q = gaussian(seed, n, n);
    for i in 0..n {
        for j in 0..i {
            let proj = q.row(i).dot(&q.row(j));
            let qj = q.row(j).to_owned();
            q.row_mut(i).scaled_add(-proj, &qj);
        }
        let norm = q.row(i).dot(&q.row(i)).sqrt();
        q.row_mut(i).mapv_inplace(|v| v / norm);
    }
    q
}

/// Well separated blobs, so predictions are stable under rounding.
fn blobs(seed: u64, n: usize, dim: usize, classes: usize) -> (Array2<f64>, Vec<usize>) {
    let centres = gaussian(seed, classes, dim) * 6.0;
    let noise = gaussian(seed + 1, n, dim);
    let y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let x = Array2::from_shape_fn((n, dim), |(i, j)| centres[[y[i], j]] + noise[[i, j]]);
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patch_count_and_coverage(t in 1usize..300, p_frac in 0.0f64..1.0, s_frac in 0.0f64..1.0) {
        let p = 1 + ((t - 1) as f64 * p_frac) as usize;
        let s = 1 + ((p - 1) as f64 * s_frac) as usize;
        let x: Vec<f64> = (0..t).map(|i| i as f64).collect();
        let padded = pad_front(&x, p, s);
        prop_assert_eq!(padded.len(), t + front_pad_len(t, p, s));
        prop_assert!(padded[..padded.len() - t].iter().all(|&v| v == x[0]));
        let m = patch_stack(&padded, p, s).unwrap();
        prop_assert_eq!(m.nrows(), (padded.len() - p) / s + 1);
        prop_assert_eq!(m[[m.nrows() - 1, p - 1]], x[t - 1]);
    }

    #[test]
    fn robust_scale_is_affine_invariant(xs in prop::collection::vec(-1e3f64..1e3, 2..60), a in 0.01f64..100.0, b in -1e3f64..1e3) {
        let y: Vec<f64> = xs.iter().map(|v| a * v + b).collect();
        let sx = robust_scale(&xs);
        let sy = robust_scale(&y);
        for (u, v) in sx.iter().zip(&sy) {
            prop_assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()), "{} vs {}", u, v);
        }
    }

    #[test]
    fn relevance_forms_agree_exactly(k_root in 2usize..5, vals in prop::collection::vec(-50i64..50, 48)) {
        let k = k_root * k_root;
        let r = |v: i64| Rational::new(v, 7);
        let mu1: Vec<Rational> = vals[..k].iter().map(|&v| r(v)).collect();
        let mut mu2: Vec<Rational> = vals[16..16 + k].iter().map(|&v| r(v)).collect();
        if mu1 == mu2 {
            mu2[0] += Rational::from_integer(1);
        }
        let x: Vec<Rational> = vals[32..32 + k].iter().map(|&v| r(v)).collect();
        prop_assert_eq!(
            is_label_relevant(&x, &mu1, &mu2),
            satisfies_relevance_condition(&x, &mu1, &mu2)
        );
    }

    #[test]
    fn tokens_2d_inverts(k_root in 1usize..5) {
        let k = k_root * k_root;
        let t: Vec<usize> = (0..k * k).collect();
        let tokens = tokens_2d(&t, k).unwrap();
        prop_assert_eq!(tokens.len(), k);
        prop_assert_eq!(untokenize_2d(&tokens, k).unwrap(), t);
    }

    #[test]
    fn split_partitions_and_repeats(n in 2usize..80, classes in 1usize..5, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..n).map(|i| (i * 7) % classes).collect();
        let (tr, va) = split_indices(&labels, classes, frac, seed).unwrap();
        prop_assert!(!tr.is_empty() && !va.is_empty());
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(&labels, classes, frac, seed).unwrap(), (tr, va));
    }

    #[test]
    fn archive_round_trip(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
        let values = gaussian(seed, rows, cols).mapv(|v| v as f32);
        let m = EmbeddingMatrix::new(values, "p", vec![Source {
            model_id: "m".into(),
            layer: 2,
            aggregation: Aggregation::MeanAll,
            channels: 1,
            channel_dim: cols,
        }]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_archive(&m, dir.path().join("a")).unwrap();
        prop_assert_eq!(read_archive(dir.path().join("a")).unwrap(), m);
    }

    #[test]
    fn lbfgs_descends_monotonically(seed in any::<u64>(), lambda in 1e-4f64..1.0) {
        let (x, y) = blobs(seed, 30, 3, 3);
        let out = lbfgs::minimize(
            |p: &ndarray::Array1<f64>| loss_and_grad(p.view(), x.view(), &y, 3, lambda),
            ndarray::Array1::zeros(12),
            &lbfgs::LbfgsConfig::default(),
        ).unwrap();
        prop_assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn strong_regularization_drives_weights_to_zero() {
    let (x, y) = blobs(3, 60, 4, 3);
    let opts = TrainOptions {
        lambda: 1e6,
        tol: 1e-10,
        ..TrainOptions::default()
    };
    let m = LogisticRegression::fit(x.view(), &y, 3, &opts).unwrap();
    assert!(m.weights().iter().all(|w| w.abs() < 1e-5));
    assert!((m.info().final_loss - 3f64.ln()).abs() < 1e-6);
}

#[test]
fn logistic_predictions_ignore_feature_scale() {
    let (x, y) = blobs(10, 90, 5, 3);
    let (q, _) = blobs(20, 40, 5, 3);
    let opts = TrainOptions::default();
    let base = LogisticRegression::fit(x.view(), &y, 3, &opts).unwrap().predict(q.view()).unwrap();
    for a in [0.001, 0.37, 8.0, 1e4] {
        let xs = &x * a;
        let qs = &q * a;
        let pred = LogisticRegression::fit(xs.view(), &y, 3, &opts).unwrap().predict(qs.view()).unwrap();
        assert_eq!(pred, base, "scale {a}");
    }
}

#[test]
fn logistic_tracks_nearest_centroid_on_isotropic_gaussians() {
    // equal priors and identity covariance: the Bayes boundary is the
    // perpendicular bisector of the means, which nearest centroid estimates
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 2000;
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z + if j == 0 { [-1.0, 1.0][y[i]] } else { 0.0 }
    });
    let (tr, te): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| (i / 2) % 4 != 0);
    let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<_>>();
    let xtr = x.select(Axis(0), &tr);
    let xte = x.select(Axis(0), &te);
    let acc = |p: Vec<usize>| p.iter().zip(pick(&te)).filter(|(a, b)| **a == *b).count() as f64 / te.len() as f64;
    let lr = LogisticRegression::fit(xtr.view(), &pick(&tr), 2, &TrainOptions::default()).unwrap();
    let nc = NearestCentroid::fit(xtr.view(), &pick(&tr), 2).unwrap();
    let (a, b) = (acc(lr.predict(xte.view()).unwrap()), acc(nc.predict(xte.view()).unwrap()));
    assert!((a - b).abs() <= 0.02, "logistic {a} vs centroid {b}");
    // the learned normal is close to the mean difference (x axis)
    let w = lr.weights().row(1).to_owned() - lr.weights().row(0);
    assert!(w[1].abs() < 0.15 * w[0].abs(), "{w}");
}

#[test]
fn centroid_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gaussian(5, 200, 4);
    let y: Vec<usize> = (0..200).map(|_| rand::Rng::random_range(&mut rng, 0..3)).collect();
    let m = NearestCentroid::fit(x.view(), &y, 3).unwrap();
    let pred = m.predict(x.view()).unwrap();
    for (i, row) in x.outer_iter().enumerate() {
        let mut means = vec![vec![0.0; 4]; 3];
        let mut counts = [0.0; 3];
        for (r, &l) in x.outer_iter().zip(&y) {
            counts[l] += 1.0;
            for j in 0..4 {
                means[l][j] += r[j];
            }
        }
        let mut best = (0, f64::INFINITY);
        for c in 0..3 {
            let d: f64 = (0..4).map(|j| (row[j] - means[c][j] / counts[c]).powi(2)).sum();
            if d < best.1 {
                best = (c, d);
            }
        }
        assert_eq!(pred[i], best.0);
    }
}

#[test]
fn centroid_invariant_under_rotation_and_duplication() {
    let (x, y) = blobs(7, 120, 6, 4);
    let (q, _) = blobs(8, 60, 6, 4);
    let base = NearestCentroid::fit(x.view(), &y, 4).unwrap().predict(q.view()).unwrap();
    let r = rotation(9, 6);
    let rotated = NearestCentroid::fit(x.dot(&r).view(), &y, 4).unwrap().predict(q.dot(&r).view()).unwrap();
    assert_eq!(rotated, base);
    let dup = |a: &Array2<f64>| ndarray::concatenate(Axis(1), &[a.view(), a.view()]).unwrap();
    let fused = NearestCentroid::fit(dup(&x).view(), &y, 4).unwrap().predict(dup(&q).view()).unwrap();
    assert_eq!(fused, base);
}

#[test]
fn twonn_ignores_scale_and_rotation() {
    let x = gaussian(1, 400, 3).mapv(|v| v.tanh());
    let a = twonn_id(x.view(), 0.1, IdMethod::LinearFit).unwrap();
    let scaled = twonn_id((&x * 4.0).view(), 0.1, IdMethod::LinearFit).unwrap();
    assert_eq!(a.d_hat, scaled.d_hat);
    let rotated = twonn_id(x.dot(&rotation(2, 3)).view(), 0.1, IdMethod::LinearFit).unwrap();
    assert!((a.d_hat - rotated.d_hat).abs() < 1e-9);
}

#[test]
fn alignment_symmetry_and_isometries() {
    let x = gaussian(11, 150, 8);
    let y = gaussian(12, 150, 5) + &x.slice(ndarray::s![.., ..5]);
    let xy = mutual_knn(x.view(), y.view(), 10).unwrap();
    let yx = mutual_knn(y.view(), x.view(), 10).unwrap();
    assert_eq!(xy.value, yx.value);
    let moved = mutual_knn((x.dot(&rotation(3, 8)) * 2.5).view(), (&y * 0.1).view(), 10).unwrap();
    assert!((moved.value - xy.value).abs() < 1e-12);
    let rot = mutual_knn(x.view(), x.dot(&rotation(4, 8)).view(), 10).unwrap();
    assert_eq!(rot.value, 1.0);
}

#[test]
fn pca_counts_grow_with_threshold() {
    let x = gaussian(13, 300, 12) * &ndarray::Array1::from_iter((1..=12).map(|i| i as f64));
    let mut last = 0;
    for t in [0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0] {
        let c = pca_components_for_variance(x.view(), t).unwrap();
        assert!(c >= last);
        last = c;
    }
    let iso = gaussian(14, 5000, 10);
    assert_eq!(pca_components_for_variance(iso.view(), 0.95).unwrap(), 10);
}

#[test]
fn embedding_rows_follow_sample_order() {
    let ds = synthetic_sine_pair(10, 40, 0.2, 1).unwrap();
    let cfg = PatchingConfig {
        resolution: 32,
        ..PatchingConfig::default()
    };
    let backend = MockEmbedder::new(2);
    let base = embed_dataset(&ds, &cfg, &backend, 3, Aggregation::MeanAll).unwrap();
    let perm: Vec<usize> = vec![3, 9, 0, 1, 8, 2, 7, 4, 6, 5];
    let shuffled = ds.subset(&perm, ds.split());
    let moved = embed_dataset(&shuffled, &cfg, &backend, 3, Aggregation::MeanAll).unwrap();
    assert_eq!(moved.values(), &base.values().select(Axis(0), &perm));
}

#[test]
fn relevance_forms_match_integer_oracle_on_many_points() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = 9;
    let mut draw = |lo: i64, hi: i64| -> Vec<i64> { (0..k).map(|_| rng.random_range(lo..=hi)).collect() };
    let mut ties = 0;
    for i in 0..100_000 {
        // patterns are doubled so that their midpoint is integral
        let mu1: Vec<i64> = draw(-20, 20).iter().map(|v| 2 * v).collect();
        let mu2: Vec<i64> = draw(-20, 20).iter().map(|v| 2 * v).collect();
        let x: Vec<i64> = if i % 10 == 0 {
            mu1.iter().zip(&mu2).map(|(a, b)| (a + b) / 2).collect()
        } else {
            draw(-40, 40)
        };
        let d = |m: &[i64]| x.iter().zip(m).map(|(a, b)| ((a - b) as i128).pow(2)).sum::<i128>();
        let want = d(&mu2) <= d(&mu1);
        ties += usize::from(d(&mu2) == d(&mu1));
        assert_eq!(is_label_relevant(&x, &mu1, &mu2), want, "{x:?}");
        assert_eq!(satisfies_relevance_condition(&x, &mu1, &mu2), want, "{x:?}");
    }
    assert!(ties >= 10_000);
}
