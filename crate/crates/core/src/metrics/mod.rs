//! Representation-quality measures and the correlation statistics used to
//! compare them.

mod probe;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{log_sum_exp, NORM_TOLERANCE};

pub use probe::{fit_probe, linear_probe, ProbeConfig, ProbeResult};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationMetrics {
    /// Mean squared distance between positive-pair partners.
    pub alignment: Option<f64>,
    /// Log of the mean over distinct ordered pairs of `exp(-2 |h_i - h_j|^2)`.
    pub uniformity: f64,
    /// Mean inner product over distinct same-label pairs.
    pub tolerance: Option<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Alignment, uniformity and tolerance of unit vectors.
///
/// Alignment needs `pairs`, tolerance needs `labels`; each is `None` when its
/// input is missing or has no qualifying pair.
pub fn representation_metrics(
    vectors: &[Vec<f64>],
    labels: Option<&[usize]>,
    pairs: Option<&[(usize, usize)]>,
) -> Result<RepresentationMetrics> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 vectors, got {n}")));
    }
    let d = vectors[0].len();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(Error::Shape(format!("vector {i} has dim {}, expected {d}", v.len())));
        }
        let norm = dot(v, v).sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { row: i, norm });
        }
    }
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} vectors", l.len())));
        }
    }

    let alignment = match pairs {
        Some(p) if !p.is_empty() => {
            if let Some(&(a, b)) = p.iter().find(|&&(a, b)| a >= n || b >= n) {
                return Err(Error::InvalidArgument(format!("pair ({a}, {b}) out of range")));
            }
            Some(p.iter().map(|&(a, b)| sq_dist(&vectors[a], &vectors[b])).sum::<f64>() / p.len() as f64)
        }
        _ => None,
    };

    // exponents over distinct unordered pairs; each appears twice among ordered pairs
    let mut exps = Vec::with_capacity(n * (n - 1) / 2);
    let mut tol_sum = 0.0;
    let mut tol_count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            exps.push(-2.0 * sq_dist(&vectors[i], &vectors[j]));
            if let Some(l) = labels {
                if l[i] == l[j] {
                    tol_sum += dot(&vectors[i], &vectors[j]);
                    tol_count += 1;
                }
            }
        }
    }
    let uniformity = log_sum_exp(exps.iter().copied()) - ((n * (n - 1) / 2) as f64).ln();
    let tolerance = (tol_count > 0).then(|| tol_sum / tol_count as f64);
    Ok(RepresentationMetrics {
        alignment,
        uniformity,
        tolerance,
    })
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need equal lengths >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("inputs must be finite".into()));
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson correlation with zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Kendall rank correlation, tau-b (tie-corrected).
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_x, mut ties_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i].partial_cmp(&xs[j]).expect("finite");
            let dy = ys[i].partial_cmp(&ys[j]).expect("finite");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {
                    ties_x += 1;
                    ties_y += 1;
                }
                (Equal, _) => ties_x += 1,
                (_, Equal) => ties_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = (((n0 - ties_x) * (n0 - ties_y)) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Degenerate("kendall tau of a constant vector".into()));
    }
    Ok((concordant - discordant) as f64 / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_small_cases() {
        assert!((kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_rejects_constant() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn antipodal_pair_uniformity() {
        let m = representation_metrics(&[vec![1.0, 0.0], vec![-1.0, 0.0]], None, None).unwrap();
        assert!((m.uniformity + 8.0).abs() < 1e-12);
    }
}
