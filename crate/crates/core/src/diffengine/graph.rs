//! Static computation graphs.
//!
//! Nodes are appended in topological order by construction: every builder
//! method only accepts ids of nodes that already exist, so the graph is
//! acyclic and shape-checked before anything executes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Clone, Debug)]
pub enum Op {
    Input {
        slot: usize,
    },
    Param {
        name: String,
    },
    Const {
        value: Tensor<f64>,
    },
    /// `x[N,in] * w[out,in]^T + b[out]`
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    /// NCHW convolution, odd square kernel, zero padding `k / 2`.
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
    },
    Relu(NodeId),
    /// `[N,C,H,W] -> [N,C]`
    GlobalAvgPool(NodeId),
    /// `[N,...] -> [N,prod(...)]`
    Flatten(NodeId),
    /// Row-wise unit-norm projection of a `[N,D]` matrix.
    L2Normalize(NodeId),
    /// Row-wise log-sum-exp, `[N,D] -> [N]`.
    LogSumExp(NodeId),
    /// `a[N,D] * b[M,D]^T`
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `[N,D] -> [N]`
    RowSum(NodeId),
    /// Mean of all elements, rank-0 result.
    Mean(NodeId),
    SliceRows {
        x: NodeId,
        start: usize,
        end: usize,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param { .. } => "param",
            Op::Const { .. } => "const",
            Op::Affine { .. } => "affine",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Flatten(_) => "flatten",
            Op::L2Normalize(_) => "l2_normalize",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::RowSum(_) => "row_sum",
            Op::Mean(_) => "mean",
            Op::SliceRows { .. } => "slice_rows",
        }
    }

    pub fn operands(&self) -> Vec<NodeId> {
        match *self {
            Op::Input { .. } | Op::Param { .. } | Op::Const { .. } => vec![],
            Op::Affine { x, w, b } | Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::Relu(a)
            | Op::GlobalAvgPool(a)
            | Op::Flatten(a)
            | Op::L2Normalize(a)
            | Op::LogSumExp(a)
            | Op::Scale(a, _)
            | Op::RowSum(a)
            | Op::Mean(a)
            | Op::SliceRows { x: a, .. } => vec![a],
            Op::MatMulNT(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    /// True when the node depends on at least one parameter.
    pub needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    params: Vec<(String, NodeId)>,
    outputs: Vec<NodeId>,
    loss: Option<NodeId>,
}

pub(crate) fn conv_out(size: usize, k: usize, stride: usize) -> usize {
    (size + 2 * (k / 2) - k) / stride + 1
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn loss(&self) -> Option<NodeId> {
        self.loss
    }

    pub fn add_output(&mut self, id: NodeId) {
        self.outputs.push(id);
    }

    pub fn set_loss(&mut self, id: NodeId) {
        self.loss = Some(id);
    }

    fn check(&self, id: NodeId) -> Result<&[usize]> {
        self.nodes
            .get(id)
            .map(|n| n.shape.as_slice())
            .ok_or_else(|| Error::Shape(format!("unknown node {id}")))
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let needs_grad = match &op {
            Op::Param { .. } => true,
            other => other.operands().iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node { op, shape, needs_grad });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        let slot = self.inputs.len();
        let id = self.push(Op::Input { slot }, shape.to_vec());
        self.inputs.push(id);
        id
    }

    /// Declares (or reuses) a named parameter of the given shape.
    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if let Some((_, id)) = self.params.iter().find(|(n, _)| n == name) {
            if self.nodes[*id].shape != shape {
                return Err(Error::Shape(format!(
                    "parameter `{name}` redeclared as {:?} (was {:?})",
                    shape, self.nodes[*id].shape
                )));
            }
            return Ok(*id);
        }
        let id = self.push(Op::Param { name: name.to_string() }, shape.to_vec());
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor<f64>) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const { value }, shape)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.check(x)?.to_vec(),
            self.check(w)?.to_vec(),
            self.check(b)?.to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs != [ws[0]] || xs[1] != ws[1] {
            return Err(Error::Shape(format!("affine: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        Ok(self.push(Op::Affine { x, w, b }, vec![xs[0], ws[0]]))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.check(x)?.to_vec(),
            self.check(w)?.to_vec(),
            self.check(b)?.to_vec(),
        );
        let ok = xs.len() == 4
            && ws.len() == 4
            && ws[1] == xs[1]
            && ws[2] == ws[3]
            && ws[2] % 2 == 1
            && bs == [ws[0]]
            && (stride == 1 || stride == 2);
        if !ok {
            return Err(Error::Shape(format!(
                "conv2d: x {xs:?}, w {ws:?}, b {bs:?}, stride {stride}"
            )));
        }
        let k = ws[2];
        let shape = vec![xs[0], ws[0], conv_out(xs[2], k, stride), conv_out(xs[3], k, stride)];
        Ok(self.push(Op::Conv2d { x, w, b, stride }, shape))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        Ok(self.push(Op::Relu(x), s))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("global_avg_pool expects NCHW, got {s:?}")));
        }
        Ok(self.push(Op::GlobalAvgPool(x), vec![s[0], s[1]]))
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        if s.is_empty() {
            return Err(Error::Shape("flatten of a scalar".into()));
        }
        let rest = s[1..].iter().product();
        Ok(self.push(Op::Flatten(x), vec![s[0], rest]))
    }

    fn matrix(&self, x: NodeId, what: &str) -> Result<Vec<usize>> {
        let s = self.check(x)?.to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("{what} expects a matrix, got {s:?}")));
        }
        Ok(s)
    }

    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.matrix(x, "l2_normalize")?;
        Ok(self.push(Op::L2Normalize(x), s))
    }

    pub fn log_sum_exp(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.matrix(x, "log_sum_exp")?;
        Ok(self.push(Op::LogSumExp(x), vec![s[0]]))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.matrix(a, "matmul_nt")?;
        let sb = self.matrix(b, "matmul_nt")?;
        if sa[1] != sb[1] {
            return Err(Error::Shape(format!("matmul_nt: {sa:?} x {sb:?}^T")));
        }
        Ok(self.push(Op::MatMulNT(a, b), vec![sa[0], sb[0]]))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<Vec<usize>> {
        let sa = self.check(a)?.to_vec();
        let sb = self.check(b)?;
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape(a, b, "sub")?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let s = self.check(a)?.to_vec();
        Ok(self.push(Op::Scale(a, c), s))
    }

    pub fn row_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.matrix(x, "row_sum")?;
        Ok(self.push(Op::RowSum(x), vec![s[0]]))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        Ok(self.push(Op::Mean(x), Vec::new()))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        if s.is_empty() || start >= end || end > s[0] {
            return Err(Error::Shape(format!("slice_rows {start}..{end} of {s:?}")));
        }
        let mut out = s.clone();
        out[0] = end - start;
        Ok(self.push(Op::SliceRows { x, start, end }, out))
    }
}
