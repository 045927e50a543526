//! NT-Xent loss, its conversion to an MI estimate in bits, and an exact
//! discrete MI oracle.
//!
//! The functions here work in `f64` on plain rows and serve as the reference
//! path; [`graph`] builds the same loss inside a differentiable graph.

pub mod graph;
pub mod tabular;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of an input embedding's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-4;
/// Slack on the `log2(2K - 1)` ceiling, for rounding only.
pub const BOUND_SLACK_BITS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    InBatch,
    /// Negatives drawn from a separate set; `m` per batch.
    External {
        m: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub nats: f64,
    /// `l(x_k, y_k)` for every k, then `l(y_k, x_k)` for every k.
    pub per_pair_terms: Vec<f64>,
    /// Batch size that produced the loss.
    pub k: usize,
    pub negatives: NegativeSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiValueBits {
    pub bits: f64,
    pub k_used: usize,
}

/// `log2(2K - 1)`, the ceiling of the in-batch estimate.
pub fn bound_bits(k: usize) -> f64 {
    ((2 * k - 1) as f64).log2()
}

fn check_rows(name: &str, rows: &[Vec<f64>], dim: usize) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Shape(format!(
                "{name} row {i} has dim {}, expected {dim}",
                r.len()
            )));
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { row: i, norm });
        }
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log sum exp` over `xs` with max subtraction.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Per-anchor NT-Xent terms from a `2K x 2K` logit matrix whose first K rows
/// are the x views and last K rows their partners. The diagonal is ignored.
pub fn nt_xent_terms_from_logits(logits: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = logits.len();
    if n == 0 || n % 2 != 0 || logits.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("logits must be 2K x 2K, got {n} rows")));
    }
    let k = n / 2;
    Ok((0..n)
        .map(|a| {
            let partner = (a + k) % n;
            let row = &logits[a];
            let lse = log_sum_exp((0..n).filter(|&j| j != a).map(|j| row[j]));
            // nonnegative in exact arithmetic; the clamp absorbs rounding
            (lse - row[partner]).max(0.0)
        })
        .collect())
}

fn finish(terms: Vec<f64>, k: usize, negatives: NegativeSource) -> Result<LossValue> {
    if let Some(i) = terms.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            node: i,
            op: "nt_xent_term",
        });
    }
    let nats = terms.iter().sum::<f64>() / terms.len() as f64;
    Ok(LossValue {
        nats,
        per_pair_terms: terms,
        k,
        negatives,
    })
}

/// NT-Xent over K pairs of unit vectors with cosine similarity and temperature `tau`.
///
/// Each anchor's denominator holds its partner plus the other 2K - 2 views.
pub fn nt_xent(emb_x: &[Vec<f64>], emb_y: &[Vec<f64>], tau: f64) -> Result<LossValue> {
    check_tau(tau)?;
    let k = emb_x.len();
    if k == 0 || emb_y.len() != k {
        return Err(Error::Shape(format!(
            "need K >= 1 pairs, got {} and {}",
            k,
            emb_y.len()
        )));
    }
    let dim = emb_x[0].len();
    check_rows("emb_x", emb_x, dim)?;
    check_rows("emb_y", emb_y, dim)?;
    let all: Vec<&Vec<f64>> = emb_x.iter().chain(emb_y.iter()).collect();
    let logits: Vec<Vec<f64>> = all
        .iter()
        .map(|a| all.iter().map(|b| dot(a, b) / tau).collect())
        .collect();
    finish(nt_xent_terms_from_logits(&logits)?, k, NegativeSource::InBatch)
}

/// NT-Xent where each anchor is contrasted only against `emb_neg`.
pub fn nt_xent_external(emb_x: &[Vec<f64>], emb_y: &[Vec<f64>], emb_neg: &[Vec<f64>], tau: f64) -> Result<LossValue> {
    check_tau(tau)?;
    let k = emb_x.len();
    if emb_neg.is_empty() {
        return Err(Error::InvalidArgument(
            "external variant needs at least one negative; use nt_xent for none".into(),
        ));
    }
    if k == 0 || emb_y.len() != k {
        return Err(Error::Shape(format!(
            "need K >= 1 pairs, got {} and {}",
            k,
            emb_y.len()
        )));
    }
    let dim = emb_x[0].len();
    check_rows("emb_x", emb_x, dim)?;
    check_rows("emb_y", emb_y, dim)?;
    check_rows("emb_neg", emb_neg, dim)?;
    let term = |a: &[f64], p: &[f64]| {
        let pos = dot(a, p) / tau;
        let lse = log_sum_exp(std::iter::once(pos).chain(emb_neg.iter().map(|n| dot(a, n) / tau)));
        (lse - pos).max(0.0)
    };
    let mut terms: Vec<f64> = (0..k).map(|i| term(&emb_x[i], &emb_y[i])).collect();
    terms.extend((0..k).map(|i| term(&emb_y[i], &emb_x[i])));
    finish(terms, k, NegativeSource::External { m: emb_neg.len() })
}

/// `(ln(2K - 1) - L) / ln 2`, asserted against the `log2(2K - 1)` ceiling.
pub fn estimated_mi_bits(loss: &LossValue, k: usize) -> Result<MiValueBits> {
    if loss.k != k {
        return Err(Error::BatchSizeMismatch {
            loss_k: loss.k,
            claimed: k,
        });
    }
    if loss.negatives != NegativeSource::InBatch {
        return Err(Error::InvalidArgument(
            "the ln(2K-1) offset applies to in-batch negatives only".into(),
        ));
    }
    mi_bits_from_nats(loss.nats, k)
}

/// Same conversion from a raw loss in nats (the training path, where the
/// loss comes out of the graph).
pub fn mi_bits_from_nats(nats: f64, k: usize) -> Result<MiValueBits> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if !(nats >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss must be a nonnegative number, got {nats}"
        )));
    }
    let bits = (((2 * k - 1) as f64).ln() - nats) / LN_2;
    let bound = bound_bits(k);
    if bits > bound + BOUND_SLACK_BITS {
        return Err(Error::BoundViolation { bits, bound });
    }
    Ok(MiValueBits { bits, k_used: k })
}

/// Mutual information in bits of a joint probability table.
pub fn exact_mi_discrete(joint: &[Vec<f64>]) -> Result<f64> {
    let cols = joint.first().map_or(0, Vec::len);
    if joint.is_empty() || cols == 0 || joint.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("joint must be a nonempty rectangular table".into()));
    }
    if joint.iter().flatten().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("joint entries must be finite and >= 0".into()));
    }
    let total: f64 = joint.iter().flatten().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("joint sums to {total}, not 1")));
    }
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..cols).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (i, r) in joint.iter().enumerate() {
        for (j, &p) in r.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (px[i] * py[j])).log2();
            }
        }
    }
    Ok(mi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_has_zero_loss() {
        let l = nt_xent(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 0.5).unwrap();
        assert_eq!(l.nats, 0.0);
    }

    #[test]
    fn rejects_unnormalized_and_bad_tau() {
        assert!(matches!(
            nt_xent(&[vec![2.0, 0.0]], &[vec![1.0, 0.0]], 1.0),
            Err(Error::NotNormalized { row: 0, .. })
        ));
        assert!(nt_xent(&[vec![1.0, 0.0]], &[vec![1.0, 0.0]], 0.0).is_err());
    }

    #[test]
    fn k_mismatch_rejected() {
        let l = nt_xent(&[vec![1.0], vec![1.0]], &[vec![1.0], vec![1.0]], 1.0).unwrap();
        assert!(matches!(estimated_mi_bits(&l, 3), Err(Error::BatchSizeMismatch { .. })));
    }
}
