use mirig_core::error::Error;
use mirig_core::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Linear-probe accuracy and class-pairing MI estimate (bits) of 16 pretrained
/// ImageNet models: (acc 100-class, bits 100-class, acc 1k, bits 1k).
const TABLE: [(f64, f64, f64, f64); 16] = [
    (94.40, 6.100, 78.72, 7.783),
    (93.00, 5.816, 74.11, 6.761),
    (92.52, 5.560, 74.78, 6.214),
    (92.38, 5.559, 73.65, 6.232),
    (92.22, 5.539, 74.22, 6.133),
    (90.80, 5.513, 72.82, 6.157),
    (90.58, 5.480, 70.51, 6.247),
    (89.50, 5.039, 69.66, 5.774),
    (89.40, 5.546, 69.12, 6.277),
    (87.54, 5.490, 63.89, 6.221),
    (79.60, 4.792, 56.60, 4.692),
    (76.94, 4.904, 47.05, 4.907),
    (76.68, 4.188, 52.70, 3.836),
    (75.66, 4.155, 48.81, 3.915),
    (66.90, 2.916, 41.54, 2.802),
    (56.74, 2.510, 30.85, 2.583),
];

#[test]
fn published_correlations_are_reproduced() {
    let col = |f: fn(&(f64, f64, f64, f64)) -> f64| TABLE.iter().map(f).collect::<Vec<f64>>();
    let (acc100, mi100, acc1k, mi1k) = (col(|r| r.0), col(|r| r.1), col(|r| r.2), col(|r| r.3));
    let cases = [(&acc100, &mi100, 0.967, 0.883), (&acc1k, &mi1k, 0.943, 0.617)];
    for (acc, mi, rho, tau) in cases {
        let p = pearson(acc, mi).unwrap();
        let k = kendall_tau(acc, mi).unwrap();
        assert!((p - rho).abs() <= 1e-3, "pearson {p} vs {rho}");
        assert!((k - tau).abs() <= 1e-3, "kendall {k} vs {tau}");
    }
}

fn unit_vectors(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Direct translation of the definitions, over ordered pairs.
fn brute_force(v: &[Vec<f64>], labels: &[usize], pairs: &[(usize, usize)]) -> (f64, f64, f64) {
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let n = v.len();
    let align = pairs.iter().map(|&(a, b)| d2(&v[a], &v[b])).sum::<f64>() / pairs.len() as f64;
    let (mut s, mut cnt) = (0.0, 0.0);
    let (mut t, mut tcnt) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            s += (-2.0 * d2(&v[i], &v[j])).exp();
            cnt += 1.0;
            if labels[i] == labels[j] {
                t += v[i].iter().zip(&v[j]).map(|(x, y)| x * y).sum::<f64>();
                tcnt += 1.0;
            }
        }
    }
    (align, (s / cnt).ln(), t / tcnt)
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (n, d) in [(100, 3), (1000, 8)] {
        let v = unit_vectors(n, d, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..7)).collect();
        let pairs: Vec<(usize, usize)> = (0..n / 2).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
        let m = representation_metrics(&v, Some(&labels), Some(&pairs)).unwrap();
        let (a, u, t) = brute_force(&v, &labels, &pairs);
        assert!((m.alignment.unwrap() - a).abs() < 1e-6);
        assert!((m.uniformity - u).abs() < 1e-6);
        assert!((m.tolerance.unwrap() - t).abs() < 1e-6);
    }
}

#[test]
fn collapsed_cluster_values_are_exact() {
    let v = vec![vec![0.6, 0.8]; 5];
    let pairs = [(0, 1), (2, 3)];
    let m = representation_metrics(&v, Some(&[1, 1, 1, 1, 1]), Some(&pairs)).unwrap();
    assert_eq!(m.alignment, Some(0.0));
    assert_eq!(m.uniformity, 0.0);
    assert_eq!(m.tolerance, Some(1.0));
}

#[test]
fn antipodal_pair_uniformity_is_minus_eight() {
    let m = representation_metrics(&[vec![0.0, 1.0], vec![0.0, -1.0]], None, None).unwrap();
    assert!((m.uniformity + 8.0).abs() < 1e-12);
    assert_eq!(m.alignment, None);
    assert_eq!(m.tolerance, None);
}

#[test]
fn metric_input_errors() {
    assert!(representation_metrics(&[vec![1.0, 0.0]], None, None).is_err());
    assert!(matches!(
        representation_metrics(&[vec![1.0, 0.0], vec![2.0, 0.0]], None, None),
        Err(Error::NotNormalized { row: 1, .. })
    ));
    assert!(matches!(
        representation_metrics(&[vec![1.0, 0.0], vec![1.0]], None, None),
        Err(Error::Shape(_))
    ));
    assert!(representation_metrics(&[vec![1.0], vec![1.0]], None, Some(&[(0, 2)])).is_err());
    // no same-label pair
    let m = representation_metrics(&[vec![1.0], vec![1.0]], Some(&[0, 1]), None).unwrap();
    assert_eq!(m.tolerance, None);
}

#[test]
fn correlation_degenerate_inputs() {
    assert!(matches!(
        pearson(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0]),
        Err(Error::Degenerate(_))
    ));
    assert!(matches!(
        kendall_tau(&[1.0, 2.0, 3.0], &[5.0; 3]),
        Err(Error::Degenerate(_))
    ));
    assert!(pearson(&[1.0], &[1.0]).is_err());
    assert!(pearson(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
}

#[test]
fn perfect_orderings() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let rev: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
    assert!((pearson(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
    assert_eq!(kendall_tau(&x, &rev).unwrap(), -1.0);
}

#[test]
fn one_hot_features_are_perfectly_separable() {
    let c = 4;
    let x: Vec<Vec<f64>> = (0..80)
        .map(|i| (0..c).map(|j| (i % c == j) as u8 as f64).collect())
        .collect();
    let y: Vec<usize> = (0..80).map(|i| i % c).collect();
    let r = fit_probe(&x, &y, &x[..20], &y[..20], c, &ProbeConfig::default()).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.train_accuracy, 1.0);
    assert!(!r.degenerate);
}

#[test]
fn constant_features_fall_back_to_the_majority_class() {
    let x = vec![vec![3.0, -1.0]; 10];
    let y = vec![2, 2, 2, 0, 1, 2, 2, 0, 2, 1];
    let r = fit_probe(&x, &y, &x[..4], &y[..4], 3, &ProbeConfig::default()).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.accuracy, 0.75);
}

#[test]
fn probe_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<usize> = x.iter().map(|r| (r[0] + 0.3 * r[1] > 0.0) as usize).collect();
    let a = fit_probe(&x[..150], &y[..150], &x[150..], &y[150..], 2, &ProbeConfig::default()).unwrap();
    let b = fit_probe(&x[..150], &y[..150], &x[150..], &y[150..], 2, &ProbeConfig::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.accuracy > 0.9, "{a:?}");
}

#[test]
fn probe_label_range_is_checked() {
    let x = vec![vec![1.0], vec![2.0]];
    assert!(fit_probe(&x, &[0, 3], &x, &[0, 1], 2, &ProbeConfig::default()).is_err());
}

proptest! {
    #[test]
    fn pearson_ignores_positive_affine_maps(
        xs in prop::collection::vec(-100.0f64..100.0, 3..30),
        noise in prop::collection::vec(-1.0f64..1.0, 30),
        a in 0.1f64..10.0,
        b in -50.0f64..50.0,
    ) {
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| x * 0.5 + e * 20.0).collect();
        let base = pearson(&xs, &ys);
        prop_assume!(base.is_ok());
        let mapped: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        prop_assert!((pearson(&mapped, &ys).unwrap() - base.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn kendall_ignores_monotone_maps(
        xs in prop::collection::vec(-5.0f64..5.0, 3..30),
        ys in prop::collection::vec(-5.0f64..5.0, 30),
    ) {
        let ys = &ys[..xs.len()];
        let base = kendall_tau(&xs, ys);
        prop_assume!(base.is_ok());
        let mapped: Vec<f64> = xs.iter().map(|x| x.exp() + x.powi(3)).collect();
        prop_assert_eq!(kendall_tau(&mapped, ys).unwrap(), base.unwrap());
    }

    #[test]
    fn uniformity_is_at_most_zero(seed in any::<u64>(), n in 2usize..30, d in 1usize..5) {
        let v = unit_vectors(n, d, &mut ChaCha8Rng::seed_from_u64(seed));
        let m = representation_metrics(&v, None, None).unwrap();
        prop_assert!(m.uniformity <= 1e-12 && m.uniformity >= -8.0 - 1e-12);
    }
}
