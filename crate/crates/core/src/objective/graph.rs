//! The NT-Xent loss as a differentiable subgraph.

use crate::diffengine::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Additive mask for excluded logits; exp underflows to exactly zero.
pub const MASK: f64 = -1e9;

/// Nodes of an NT-Xent subgraph.
#[derive(Clone, Copy, Debug)]
pub struct NtXentNodes {
    /// Scalar mean loss in nats.
    pub loss: NodeId,
    /// `[2K]` per-anchor terms.
    pub terms: NodeId,
}

fn partner_and_mask(k: usize, cols: usize, external: bool) -> (Tensor<f64>, Tensor<f64>) {
    let n = 2 * k;
    let mut partner = vec![0.0; n * cols];
    let mut mask = vec![0.0; n * cols];
    for a in 0..n {
        let p = (a + k) % n;
        partner[a * cols + p] = 1.0;
        for j in 0..cols {
            let allowed = if external { j == p || j >= n } else { j != a };
            if !allowed {
                mask[a * cols + j] = MASK;
            }
        }
    }
    (
        Tensor::new(vec![n, cols], partner).expect("sized above"),
        Tensor::new(vec![n, cols], mask).expect("sized above"),
    )
}

fn terms_from_logits(g: &mut Graph, logits: NodeId, k: usize, external: bool) -> Result<NtXentNodes> {
    let cols = g.shape(logits)[1];
    let (partner, mask) = partner_and_mask(k, cols, external);
    let partner = g.constant(partner);
    let mask = g.constant(mask);
    let masked = g.add(logits, mask)?;
    let lse = g.log_sum_exp(masked)?;
    let picked = g.mul(logits, partner)?;
    let pos = g.row_sum(picked)?;
    let terms = g.sub(lse, pos)?;
    let loss = g.mean(terms)?;
    Ok(NtXentNodes { loss, terms })
}

/// NT-Xent over a `[2K, 2K]` score matrix whose rows `0..K` are x views and
/// `K..2K` their partners (already divided by the temperature).
pub fn nt_xent_from_logits(g: &mut Graph, logits: NodeId) -> Result<NtXentNodes> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || s[0] != s[1] || s[0] % 2 != 0 || s[0] == 0 {
        return Err(Error::Shape(format!("logits must be 2K x 2K, got {s:?}")));
    }
    terms_from_logits(g, logits, s[0] / 2, false)
}

/// NT-Xent with in-batch negatives over normalized `z` of shape `[2K, d]`
/// (x views stacked above y views).
pub fn nt_xent_graph(g: &mut Graph, z: NodeId, tau: f64) -> Result<NtXentNodes> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let s = g.shape(z).to_vec();
    if s.len() != 2 || s[0] % 2 != 0 || s[0] == 0 {
        return Err(Error::Shape(format!("z must be [2K, d], got {s:?}")));
    }
    let sim = g.matmul_nt(z, z)?;
    let logits = g.scale(sim, 1.0 / tau)?;
    nt_xent_from_logits(g, logits)
}

/// External-negative NT-Xent over `z` of shape `[2K + M, d]`: the last M rows
/// are negatives only, and in-batch negatives are masked out.
pub fn nt_xent_external_graph(g: &mut Graph, z: NodeId, k: usize, tau: f64) -> Result<NtXentNodes> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let s = g.shape(z).to_vec();
    if s.len() != 2 || k == 0 || s[0] <= 2 * k {
        return Err(Error::Shape(format!(
            "z must be [2K + M, d] with M >= 1, got {s:?} for K = {k}"
        )));
    }
    let anchors = g.slice_rows(z, 0, 2 * k)?;
    let sim = g.matmul_nt(anchors, z)?;
    let logits = g.scale(sim, 1.0 / tau)?;
    terms_from_logits(g, logits, k, true)
}
