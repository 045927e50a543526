use serde::{Deserialize, Serialize};

use crate::cdpgen::{CdpDataset, TaskSpec};
use crate::error::{Error, Result};
use crate::nets::EncoderRunner;
use crate::tensor::Real;
use crate::trainer::EncoderCheckpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iters: 5000,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// Every feature had zero variance; accuracy is the majority-class rate.
    pub degenerate: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub train_accuracy: f64,
}

const CHECK_EVERY: usize = 20;

struct Problem {
    x: Vec<f64>, // n x p, last column is the bias
    y: Vec<usize>,
    n: usize,
    p: usize,
    c: usize,
    l2: f64,
}

impl Problem {
    /// Mean cross-entropy plus penalty; writes the gradient into `grad`.
    fn loss_grad(&self, w: &[f64], grad: &mut [f64], logits: &mut [f64]) -> f64 {
        let (n, p, c) = (self.n, self.p, self.c);
        f64::gemm(
            n, p, c, 1.0, &self.x, p as isize, 1, w, c as isize, 1, 0.0, logits, c as isize, 1,
        );
        let mut loss = 0.0;
        for i in 0..n {
            let row = &mut logits[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            loss += s.ln() - row[self.y[i]].ln();
            for v in row.iter_mut() {
                *v /= s * n as f64;
            }
            row[self.y[i]] -= 1.0 / n as f64;
        }
        loss /= n as f64;
        // grad = X^T (P - Y) / n
        f64::gemm(
            p, n, c, 1.0, &self.x, 1, p as isize, logits, c as isize, 1, 0.0, grad, c as isize, 1,
        );
        for j in 0..(p - 1) * c {
            grad[j] += self.l2 * w[j];
            loss += 0.5 * self.l2 * w[j] * w[j];
        }
        loss
    }

    /// Upper bound on the gradient's Lipschitz constant: lambda_max(X^T X / n) / 2 + l2.
    fn lipschitz(&self) -> f64 {
        let (n, p) = (self.n, self.p);
        let mut gram = vec![0.0; p * p];
        f64::gemm(
            p,
            n,
            p,
            1.0 / n as f64,
            &self.x,
            1,
            p as isize,
            &self.x,
            p as isize,
            1,
            0.0,
            &mut gram,
            p as isize,
            1,
        );
        let mut v = vec![1.0 / (p as f64).sqrt(); p];
        let mut lambda = 0.0;
        for _ in 0..100 {
            let mut nv = vec![0.0; p];
            for i in 0..p {
                nv[i] = (0..p).map(|j| gram[i * p + j] * v[j]).sum();
            }
            let norm = nv.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lambda = norm;
            v = nv.into_iter().map(|a| a / norm).collect();
        }
        // power iteration approaches from below; pad a little
        0.5 * lambda * 1.01 + self.l2
    }

    fn predict(&self, x: &[f64], rows: usize, w: &[f64]) -> Vec<usize> {
        let (p, c) = (self.p, self.c);
        let mut logits = vec![0.0; rows * c];
        f64::gemm(
            rows,
            p,
            c,
            1.0,
            x,
            p as isize,
            1,
            w,
            c as isize,
            1,
            0.0,
            &mut logits,
            c as isize,
            1,
        );
        (0..rows)
            .map(|i| {
                let row = &logits[i * c..(i + 1) * c];
                let mut best = 0;
                for k in 1..c {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

/// Multinomial logistic regression on standardized features, fitted by
/// full-batch accelerated gradient descent with adaptive restart.
pub fn fit_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    eval_x: &[Vec<f64>],
    eval_y: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if train_x.is_empty() || train_x.len() != train_y.len() || eval_x.len() != eval_y.len() {
        return Err(Error::InvalidArgument(
            "probe needs matching, nonempty feature and label lists".into(),
        ));
    }
    if let Some(&bad) = train_y.iter().chain(eval_y).find(|&&y| y >= num_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} >= {num_classes} classes")));
    }
    let d = train_x[0].len();
    let n = train_x.len();
    let mean: Vec<f64> = (0..d)
        .map(|j| train_x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let std: Vec<f64> = (0..d)
        .map(|j| (train_x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
        .collect();
    let keep: Vec<usize> = (0..d).filter(|&j| std[j] > 1e-12).collect();

    if keep.is_empty() {
        let mut counts = vec![0usize; num_classes];
        for &y in train_y {
            counts[y] += 1;
        }
        let majority = (0..num_classes)
            .max_by_key(|&k| (counts[k], std::cmp::Reverse(k)))
            .unwrap_or(0);
        let pred = vec![majority; eval_y.len()];
        return Ok(ProbeResult {
            accuracy: accuracy(&pred, eval_y),
            degenerate: true,
            iterations: 0,
            grad_norm: 0.0,
            train_accuracy: accuracy(&vec![majority; n], train_y),
        });
    }

    let p = keep.len() + 1;
    let design = |rows: &[Vec<f64>]| -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * p);
        for r in rows {
            out.extend(keep.iter().map(|&j| (r[j] - mean[j]) / std[j]));
            out.push(1.0);
        }
        out
    };
    let prob = Problem {
        x: design(train_x),
        y: train_y.to_vec(),
        n,
        p,
        c: num_classes,
        l2: cfg.l2,
    };
    let step = 1.0 / prob.lipschitz();
    let size = p * num_classes;
    let mut w = vec![0.0; size];
    let mut w_prev = w.clone();
    let mut look = w.clone();
    let mut grad = vec![0.0; size];
    let mut logits = vec![0.0; n * num_classes];
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < cfg.max_iters {
        // convergence is judged at the current iterate, not the look-ahead point
        if iterations % CHECK_EVERY == 0 {
            prob.loss_grad(&w, &mut grad, &mut logits);
            grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if grad_norm < cfg.grad_tol {
                break;
            }
        }
        prob.loss_grad(&look, &mut grad, &mut logits);
        w_prev.copy_from_slice(&w);
        for i in 0..size {
            w[i] = look[i] - step * grad[i];
        }
        let restart = grad
            .iter()
            .zip(w.iter().zip(&w_prev))
            .map(|(g, (a, b))| g * (a - b))
            .sum::<f64>()
            > 0.0;
        if restart {
            t = 1.0;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        for i in 0..size {
            look[i] = w[i] + beta * (w[i] - w_prev[i]);
        }
        t = t_next;
        iterations += 1;
    }
    if iterations == cfg.max_iters {
        prob.loss_grad(&w, &mut grad, &mut logits);
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    }
    let eval_design = design(eval_x);
    let eval_pred = prob.predict(&eval_design, eval_x.len(), &w);
    let train_pred = prob.predict(&prob.x, n, &w);
    Ok(ProbeResult {
        accuracy: accuracy(&eval_pred, eval_y),
        degenerate: false,
        iterations,
        grad_norm,
        train_accuracy: accuracy(&train_pred, train_y),
    })
}

/// Linear-probe accuracy of the checkpoint's encoder output on the eval split.
pub fn linear_probe(
    ckpt: &EncoderCheckpoint,
    ds: &CdpDataset,
    task: &TaskSpec,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    task.require_nonempty()?;
    let enc = ckpt.encoder_params();
    let runner = EncoderRunner::new(&ckpt.meta.architecture.encoder, &enc, 256)?;
    let train: Vec<usize> = ds.train_range().collect();
    let eval: Vec<usize> = ds.eval_range().collect();
    if eval.is_empty() {
        return Err(Error::SplitTooSmall {
            required: 1,
            available: 0,
        });
    }
    let htr = runner.encode(&ds.images(&train))?.to_rows_f64();
    let hev = runner.encode(&ds.images(&eval))?.to_rows_f64();
    fit_probe(
        &htr,
        &ds.labels(task, &train),
        &hev,
        &ds.labels(task, &eval),
        task.num_classes(),
        cfg,
    )
}
