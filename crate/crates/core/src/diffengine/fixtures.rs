//! Small random graphs exercising one op each, for gradient checks.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffengine::graph::{Graph, NodeId};
use crate::diffengine::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Every differentiable op the engine supports.
pub const OP_KINDS: &[&str] = &[
    "affine",
    "conv2d_s1",
    "conv2d_s2",
    "relu",
    "global_avg_pool",
    "flatten",
    "l2_normalize",
    "log_sum_exp",
    "matmul_nt",
    "add",
    "sub",
    "mul",
    "scale",
    "row_sum",
    "mean",
    "slice_rows",
];

/// A graph with a scalar loss, its parameters and inputs.
pub struct OpInstance {
    pub graph: Graph,
    pub params: ParamSet<f64>,
    pub inputs: Vec<Tensor<f64>>,
}

impl OpInstance {
    pub fn input_refs(&self) -> Vec<&Tensor<f64>> {
        self.inputs.iter().collect()
    }
}

struct Builder {
    rng: ChaCha8Rng,
    g: Graph,
    params: ParamSet<f64>,
    inputs: Vec<Tensor<f64>>,
}

impl Builder {
    fn random(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        let dist = Uniform::new_inclusive(-1.0, 1.0);
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }

    fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        let t = self.random(shape);
        self.params.insert(name, t)?;
        self.g.param(name, shape)
    }

    fn input(&mut self, shape: &[usize]) -> NodeId {
        let t = self.random(shape);
        self.inputs.push(t);
        self.g.input(shape)
    }

    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.gen_range(lo..=hi)
    }

    /// `mean(out * C)` with a random constant `C`, so no gradient is uniform.
    fn finish(mut self, out: NodeId) -> Result<OpInstance> {
        let shape = self.g.shape(out).to_vec();
        let c = self.random(&shape);
        let c = self.g.constant(c);
        let weighted = self.g.mul(out, c)?;
        let loss = self.g.mean(weighted)?;
        self.g.set_loss(loss);
        Ok(OpInstance {
            graph: self.g,
            params: self.params,
            inputs: self.inputs,
        })
    }
}

/// Random instance of `kind` (one of [`OP_KINDS`]) with shapes and values
/// drawn from `seed`.
pub fn op_instance(kind: &str, seed: u64) -> Result<OpInstance> {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        g: Graph::new(),
        params: ParamSet::new(seed),
        inputs: Vec::new(),
    };
    let (n, d) = (b.dim(1, 4), b.dim(1, 6));
    let out = match kind {
        "affine" => {
            let o = b.dim(1, 5);
            let x = b.input(&[n, d]);
            let w = b.param("w", &[o, d])?;
            let bias = b.param("b", &[o])?;
            b.g.affine(x, w, bias)?
        }
        "conv2d_s1" | "conv2d_s2" => {
            let stride = if kind == "conv2d_s1" { 1 } else { 2 };
            let (c, o) = (b.dim(1, 3), b.dim(1, 3));
            let k = [1, 3, 5][b.dim(0, 2)];
            let (h, w) = (b.dim(2, 6), b.dim(2, 6));
            let x = b.input(&[n, c, h, w]);
            let wt = b.param("w", &[o, c, k, k])?;
            let bias = b.param("b", &[o])?;
            b.g.conv2d(x, wt, bias, stride)?
        }
        "relu" => {
            let p = b.param("p", &[n, d])?;
            b.g.relu(p)?
        }
        "global_avg_pool" | "flatten" => {
            let (c, h, w) = (b.dim(1, 3), b.dim(1, 4), b.dim(1, 4));
            let p = b.param("p", &[n, c, h, w])?;
            if kind == "flatten" {
                b.g.flatten(p)?
            } else {
                b.g.global_avg_pool(p)?
            }
        }
        "l2_normalize" => {
            // keep row norms >= 1: finite differences lose accuracy near the origin
            let p = b.param("p", &[n, d])?;
            let mut shift = Tensor::zeros(&[n, d]);
            for r in 0..n {
                shift.data_mut()[r * d] = 2.0;
            }
            let shift = b.g.constant(shift);
            let p = b.g.add(p, shift)?;
            b.g.l2_normalize(p)?
        }
        "log_sum_exp" => {
            let p = b.param("p", &[n, d])?;
            let p = b.g.scale(p, 3.0)?;
            b.g.log_sum_exp(p)?
        }
        "matmul_nt" => {
            let m = b.dim(1, 4);
            let p = b.param("a", &[n, d])?;
            let q = b.param("b", &[m, d])?;
            b.g.matmul_nt(p, q)?
        }
        "add" | "sub" | "mul" => {
            let p = b.param("a", &[n, d])?;
            let q = b.param("b", &[n, d])?;
            match kind {
                "add" => b.g.add(p, q)?,
                "sub" => b.g.sub(p, q)?,
                _ => b.g.mul(p, q)?,
            }
        }
        "scale" => {
            let c = b.rng.gen_range(-2.0..2.0);
            let p = b.param("p", &[n, d])?;
            b.g.scale(p, c)?
        }
        "row_sum" => {
            let p = b.param("p", &[n, d])?;
            b.g.row_sum(p)?
        }
        "mean" => {
            let p = b.param("p", &[n, d])?;
            b.g.mean(p)?
        }
        "slice_rows" => {
            let rows = n + 1;
            let start = b.dim(0, rows - 1);
            let end = b.dim(start + 1, rows);
            let p = b.param("p", &[rows, d])?;
            b.g.slice_rows(p, start, end)?
        }
        other => return Err(Error::InvalidArgument(format!("unknown op kind `{other}`"))),
    };
    b.finish(out)
}
