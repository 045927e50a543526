//! InfoNCE with a free score table on a finite alphabet, used to check the
//! estimator against [`exact_mi_discrete`](super::exact_mi_discrete).
//!
//! The same table scores every pair of views, so x-x negatives and x-y
//! negatives are scored alike. On a symmetric joint both kinds are
//! independent draws from the common marginal, which keeps the 2K - 1
//! candidates of each anchor exchangeable.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::graph::nt_xent_from_logits;
use super::mi_bits_from_nats;
use crate::diffengine::{forward, forward_backward, Graph, Optimizer, OptimizerConfig, ParamSet};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, STREAM_EVAL, STREAM_PAIRING};
use crate::tensor::{Real, Tensor};

/// Random symmetric `n x n` joint with entries `(A + A^T) / sum`, `A_ij = u^3`.
///
/// Cubing spreads the mass so the tables carry a non-trivial amount of MI.
pub fn random_symmetric_joint<R: Rng>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen::<f64>().powi(3)).collect())
        .collect();
    let mut j: Vec<Vec<f64>> = (0..n).map(|r| (0..n).map(|c| a[r][c] + a[c][r]).collect()).collect();
    let total: f64 = j.iter().flatten().sum();
    for v in j.iter_mut().flatten() {
        *v /= total;
    }
    j
}

pub fn sample_joint<R: Rng>(joint: &[Vec<f64>], count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let n = joint.len();
    let cols = joint.first().map_or(0, Vec::len);
    let flat: Vec<f64> = joint.iter().flatten().copied().collect();
    let dist = WeightedIndex::new(&flat).map_err(|e| Error::InvalidArgument(format!("joint: {e}")))?;
    debug_assert_eq!(flat.len(), n * cols);
    Ok((0..count)
        .map(|_| {
            let c = dist.sample(rng);
            (c / cols, c % cols)
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct TabularConfig {
    pub k: usize,
    pub steps: usize,
    pub lr: f64,
    pub eval_batches: usize,
    pub seed: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            k: 512,
            steps: 400,
            lr: 0.05,
            eval_batches: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TabularEstimate {
    /// Mean held-out estimate in bits.
    pub bits: f64,
    pub std_bits: f64,
    pub train_curve: Vec<f64>,
    pub table: Tensor<f32>,
}

fn onehot_batch(pairs: &[(usize, usize)], n: usize) -> Tensor<f32> {
    let k = pairs.len();
    let mut data = vec![0.0f32; 2 * k * n];
    for (i, &(x, y)) in pairs.iter().enumerate() {
        data[i * n + x] = 1.0;
        data[(k + i) * n + y] = 1.0;
    }
    Tensor::new(vec![2 * k, n], data).expect("sized above")
}

/// Graph for one batch: score(u_i, u_j) = W[u_j][u_i] + b[u_j].
pub fn tabular_graph(n: usize, k: usize) -> Result<Graph> {
    let mut g = Graph::new();
    let u = g.input(&[2 * k, n]);
    let w = g.param("table.w", &[n, n])?;
    let b = g.param("table.b", &[n])?;
    let t = g.affine(u, w, b)?;
    let logits = g.matmul_nt(t, u)?;
    let nodes = nt_xent_from_logits(&mut g, logits)?;
    g.set_loss(nodes.loss);
    Ok(g)
}

/// Trains the table on fresh draws each step, then evaluates on fresh
/// held-out batches.
pub fn fit_tabular_critic(joint: &[Vec<f64>], cfg: &TabularConfig) -> Result<TabularEstimate> {
    let n = joint.len();
    if joint.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("tabular critic needs a square joint".into()));
    }
    if cfg.k < 1 || cfg.eval_batches < 1 {
        return Err(Error::InvalidArgument("K and eval_batches must be positive".into()));
    }
    let g = tabular_graph(n, cfg.k)?;
    let mut params = ParamSet::<f32>::new(cfg.seed);
    params.insert("table.w", Tensor::zeros(&[n, n]))?;
    params.insert("table.b", Tensor::zeros(&[n]))?;
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.lr))?;
    let mut train_rng = derive_rng(cfg.seed, 0, STREAM_PAIRING);
    let mut train_curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let pairs = sample_joint(joint, cfg.k, &mut train_rng)?;
        let batch = onehot_batch(&pairs, n);
        let ev = forward_backward(&g, &params, &[&batch])?;
        train_curve.push(mi_bits_from_nats(ev.loss.expect("loss set").as_f64(), cfg.k)?.bits);
        opt.step(&mut params, ev.grads.as_ref().expect("grads requested"))?;
    }
    let mut eval_rng = derive_rng(cfg.seed, 0, STREAM_EVAL);
    let mut vals = Vec::with_capacity(cfg.eval_batches);
    for _ in 0..cfg.eval_batches {
        let pairs = sample_joint(joint, cfg.k, &mut eval_rng)?;
        let ev = forward(&g, &params, &[&onehot_batch(&pairs, n)])?;
        vals.push(mi_bits_from_nats(ev.loss.expect("loss set").as_f64(), cfg.k)?.bits);
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    Ok(TabularEstimate {
        bits: mean,
        std_bits: var.sqrt(),
        train_curve,
        table: params.get("table.w").expect("inserted").clone(),
    })
}
