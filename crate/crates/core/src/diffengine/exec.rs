//! Forward evaluation and reverse-mode gradients over a [`Graph`].

use std::borrow::Cow;

use crate::diffengine::graph::{Graph, NodeId, Op};
use crate::diffengine::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Rows whose norm is at or below this are mapped to the first basis vector.
pub const NORMALIZE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub grads: bool,
    /// Record relu sign patterns so finite-difference probes can detect kinks.
    pub track_kinks: bool,
}

/// Which side of every relu / normalization guard each element fell on.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct KinkSignature {
    pub bits: Vec<u64>,
    pub exact_zeros: usize,
}

impl KinkSignature {
    fn push(&mut self, idx: &mut usize, on: bool) {
        if *idx % 64 == 0 {
            self.bits.push(0);
        }
        if on {
            *self.bits.last_mut().unwrap() |= 1 << (*idx % 64);
        }
        *idx += 1;
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub outputs: Vec<Tensor<T>>,
    pub loss: Option<T>,
    /// One slot per entry of the supplied `ParamSet`; unused parameters get zeros.
    pub grads: Option<ParamSet<T>>,
    /// Rows the l2 guard replaced with the first basis vector.
    pub collapsed_rows: usize,
    pub kinks: Option<KinkSignature>,
}

pub fn forward<T: Real>(graph: &Graph, params: &ParamSet<T>, inputs: &[&Tensor<T>]) -> Result<Evaluation<T>> {
    evaluate(graph, params, inputs, EvalOptions::default())
}

pub fn forward_backward<T: Real>(graph: &Graph, params: &ParamSet<T>, inputs: &[&Tensor<T>]) -> Result<Evaluation<T>> {
    evaluate(
        graph,
        params,
        inputs,
        EvalOptions {
            grads: true,
            track_kinks: false,
        },
    )
}

fn validate<T: Real>(graph: &Graph, params: &ParamSet<T>, inputs: &[&Tensor<T>], grads: bool) -> Result<()> {
    if inputs.len() != graph.inputs().len() {
        return Err(Error::Shape(format!(
            "graph declares {} inputs, {} supplied",
            graph.inputs().len(),
            inputs.len()
        )));
    }
    for (slot, (&id, t)) in graph.inputs().iter().zip(inputs).enumerate() {
        if graph.shape(id) != t.shape() {
            return Err(Error::Shape(format!(
                "input {slot}: expected {:?}, got {:?}",
                graph.shape(id),
                t.shape()
            )));
        }
    }
    for (name, id) in graph.params() {
        let p = params.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
        if p.shape() != graph.shape(*id) {
            return Err(Error::Shape(format!(
                "parameter `{name}`: graph expects {:?}, set holds {:?}",
                graph.shape(*id),
                p.shape()
            )));
        }
    }
    if grads {
        match graph.loss() {
            None => return Err(Error::LossNotScalar("the graph has no loss node".into())),
            Some(l) if graph.shape(l).iter().product::<usize>() != 1 => {
                return Err(Error::LossNotScalar(format!(
                    "loss node {l} has shape {:?}",
                    graph.shape(l)
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(xs: &[usize], ws: &[usize], ys: &[usize], stride: usize) -> Self {
        Self {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            k: ws[2],
            stride,
            ho: ys[2],
            wo: ys[3],
        }
    }
    fn np(&self) -> usize {
        self.n * self.ho * self.wo
    }
    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let np = g.np();
    let pad = (g.k / 2) as isize;
    let mut col = vec![T::zero(); g.ckk() * np];
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut col[row * np..(row + 1) * np];
                for ni in 0..g.n {
                    let plane = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    for oh in 0..g.ho {
                        let ih = (oh * g.stride) as isize + ki as isize - pad;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                        let base = (ni * g.ho + oh) * g.wo;
                        for ow in 0..g.wo {
                            let iw = (ow * g.stride) as isize + kj as isize - pad;
                            if iw >= 0 && iw < g.w as isize {
                                dst[base + ow] = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_add<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let np = g.np();
    let pad = (g.k / 2) as isize;
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &col[row * np..(row + 1) * np];
                for ni in 0..g.n {
                    let plane_off = (ni * g.c + ci) * g.h * g.w;
                    for oh in 0..g.ho {
                        let ih = (oh * g.stride) as isize + ki as isize - pad;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let base = (ni * g.ho + oh) * g.wo;
                        let drow = plane_off + ih as usize * g.w;
                        for ow in 0..g.wo {
                            let iw = (ow * g.stride) as isize + kj as isize - pad;
                            if iw >= 0 && iw < g.w as isize {
                                let d = &mut dx[drow + iw as usize];
                                *d = *d + src[base + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

enum Aux<T> {
    None,
    Col(Vec<T>),
    Norms(Vec<T>),
}

fn slot<'g, T: Real>(grads: &'g mut [Option<Tensor<T>>], id: NodeId, shape: &[usize]) -> &'g mut [T] {
    grads[id].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
}

/// Runs the graph; with `opts.grads` also back-propagates from the loss node.
pub fn evaluate<T: Real>(
    graph: &Graph,
    params: &ParamSet<T>,
    inputs: &[&Tensor<T>],
    opts: EvalOptions,
) -> Result<Evaluation<T>> {
    validate(graph, params, inputs, opts.grads)?;
    let nodes = graph.nodes();
    let mut values: Vec<Cow<'_, Tensor<T>>> = Vec::with_capacity(nodes.len());
    let mut aux: Vec<Aux<T>> = Vec::with_capacity(nodes.len());
    let mut collapsed_rows = 0usize;
    let mut kinks = opts.track_kinks.then(KinkSignature::default);
    let mut kink_idx = 0usize;

    for (id, node) in nodes.iter().enumerate() {
        let shape = &node.shape;
        let mut extra = Aux::None;
        let value: Cow<'_, Tensor<T>> = match &node.op {
            Op::Input { slot } => Cow::Borrowed(inputs[*slot]),
            Op::Param { name } => Cow::Borrowed(params.get(name).expect("validated")),
            Op::Const { value } => Cow::Owned(value.cast()),
            Op::Affine { x, w, b } => {
                let (xv, wv, bv) = (&values[*x], &values[*w], &values[*b]);
                let (n, din) = (xv.shape()[0], xv.shape()[1]);
                let dout = wv.shape()[0];
                let mut out = vec![T::zero(); n * dout];
                for r in 0..n {
                    out[r * dout..(r + 1) * dout].copy_from_slice(bv.data());
                }
                T::gemm(
                    n,
                    din,
                    dout,
                    T::one(),
                    xv.data(),
                    din as isize,
                    1,
                    wv.data(),
                    1,
                    din as isize,
                    T::one(),
                    &mut out,
                    dout as isize,
                    1,
                );
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::Conv2d { x, w, b, stride } => {
                let (xv, wv, bv) = (&values[*x], &values[*w], &values[*b]);
                let g = ConvGeom::new(xv.shape(), wv.shape(), shape, *stride);
                let col = im2col(xv.data(), &g);
                let np = g.np();
                let mut mat = vec![T::zero(); g.o * np];
                T::gemm(
                    g.o,
                    g.ckk(),
                    np,
                    T::one(),
                    wv.data(),
                    g.ckk() as isize,
                    1,
                    &col,
                    np as isize,
                    1,
                    T::zero(),
                    &mut mat,
                    np as isize,
                    1,
                );
                let p = g.ho * g.wo;
                let mut out = vec![T::zero(); g.n * g.o * p];
                for ni in 0..g.n {
                    for oc in 0..g.o {
                        let bias = bv.data()[oc];
                        let src = &mat[oc * np + ni * p..oc * np + (ni + 1) * p];
                        let dst = &mut out[(ni * g.o + oc) * p..(ni * g.o + oc + 1) * p];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = *s + bias;
                        }
                    }
                }
                if opts.grads {
                    extra = Aux::Col(col);
                }
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::Relu(x) => {
                let xv = &values[*x];
                if let Some(k) = kinks.as_mut() {
                    for &v in xv.data() {
                        if v == T::zero() {
                            k.exact_zeros += 1;
                        }
                        k.push(&mut kink_idx, v > T::zero());
                    }
                }
                let out = xv.data().iter().map(|&v| v.max(T::zero())).collect();
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::GlobalAvgPool(x) => {
                let xv = &values[*x];
                let hw: usize = xv.shape()[2] * xv.shape()[3];
                let inv = T::from_f64(1.0 / hw as f64);
                let out = xv
                    .data()
                    .chunks_exact(hw)
                    .map(|c| c.iter().copied().sum::<T>() * inv)
                    .collect();
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::Flatten(x) => Cow::Owned(values[*x].as_ref().clone().reshape(shape.clone())?),
            Op::L2Normalize(x) => {
                let xv = &values[*x];
                let d = shape[1];
                let mut out = vec![T::zero(); xv.len()];
                let mut norms = vec![T::zero(); shape[0]];
                for (r, (src, dst)) in xv.data().chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
                    let norm = src.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let collapsed = norm.as_f64() <= NORMALIZE_EPS;
                    if let Some(k) = kinks.as_mut() {
                        k.push(&mut kink_idx, collapsed);
                    }
                    if collapsed {
                        collapsed_rows += 1;
                        dst[0] = T::one();
                    } else {
                        norms[r] = norm;
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o = v / norm;
                        }
                    }
                }
                extra = Aux::Norms(norms);
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::LogSumExp(x) => {
                let xv = &values[*x];
                let d = xv.shape()[1];
                let out = xv
                    .data()
                    .chunks_exact(d)
                    .map(|row| {
                        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                        m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
                    })
                    .collect();
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (&values[*a], &values[*b]);
                let (n, d) = (av.shape()[0], av.shape()[1]);
                let m = bv.shape()[0];
                let mut out = vec![T::zero(); n * m];
                T::gemm(
                    n,
                    d,
                    m,
                    T::one(),
                    av.data(),
                    d as isize,
                    1,
                    bv.data(),
                    1,
                    d as isize,
                    T::zero(),
                    &mut out,
                    m as isize,
                    1,
                );
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (av, bv) = (values[*a].data(), values[*b].data());
                let out = match &node.op {
                    Op::Add(..) => av.iter().zip(bv).map(|(&p, &q)| p + q).collect(),
                    Op::Sub(..) => av.iter().zip(bv).map(|(&p, &q)| p - q).collect(),
                    _ => av.iter().zip(bv).map(|(&p, &q)| p * q).collect(),
                };
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::Scale(a, c) => {
                let c = T::from_f64(*c);
                let out = values[*a].data().iter().map(|&v| v * c).collect();
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::RowSum(x) => {
                let xv = &values[*x];
                let d = xv.shape()[1];
                let out = xv.data().chunks_exact(d).map(|r| r.iter().copied().sum()).collect();
                Cow::Owned(Tensor::new(shape.clone(), out)?)
            }
            Op::Mean(x) => {
                let xv = &values[*x];
                let s: T = xv.data().iter().copied().sum();
                Cow::Owned(Tensor::scalar(s / T::from_f64(xv.len() as f64)))
            }
            Op::SliceRows { x, start, end } => {
                let xv = &values[*x];
                let w = xv.row_len();
                Cow::Owned(Tensor::new(shape.clone(), xv.data()[start * w..end * w].to_vec())?)
            }
        };
        if !matches!(node.op, Op::Input { .. } | Op::Param { .. }) && !value.all_finite() {
            return Err(Error::NonFinite {
                node: id,
                op: node.op.name(),
            });
        }
        values.push(value);
        aux.push(extra);
    }

    let outputs = graph.outputs().iter().map(|&o| values[o].as_ref().clone()).collect();
    let loss = graph.loss().map(|l| values[l].item());

    let grads = if opts.grads {
        Some(backward(graph, params, &values, &aux)?)
    } else {
        None
    };

    Ok(Evaluation {
        outputs,
        loss,
        grads,
        collapsed_rows,
        kinks,
    })
}

fn backward<T: Real>(
    graph: &Graph,
    params: &ParamSet<T>,
    values: &[Cow<'_, Tensor<T>>],
    aux: &[Aux<T>],
) -> Result<ParamSet<T>> {
    let nodes = graph.nodes();
    let loss = graph.loss().expect("validated");
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
    grads[loss] = Some(Tensor::filled(&nodes[loss].shape, T::one()));
    let mut out = params.zeros_like();

    for id in (0..=loss).rev() {
        let node = &nodes[id];
        if !node.needs_grad {
            continue;
        }
        let Some(gy) = grads[id].take() else { continue };
        let gy = gy.data();
        let wants = |i: NodeId| nodes[i].needs_grad;
        match &node.op {
            Op::Input { .. } | Op::Const { .. } => {}
            Op::Param { name } => {
                let pos = out.position(name).expect("validated");
                let dst = out.tensor_at_mut(pos).data_mut();
                for (d, &g) in dst.iter_mut().zip(gy) {
                    *d = *d + g;
                }
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (&values[*x], &values[*w]);
                let (n, din) = (xv.shape()[0], xv.shape()[1]);
                let dout = wv.shape()[0];
                if wants(*x) {
                    let dx = slot(&mut grads, *x, xv.shape());
                    T::gemm(
                        n,
                        dout,
                        din,
                        T::one(),
                        gy,
                        dout as isize,
                        1,
                        wv.data(),
                        din as isize,
                        1,
                        T::one(),
                        dx,
                        din as isize,
                        1,
                    );
                }
                if wants(*w) {
                    let dw = slot(&mut grads, *w, wv.shape());
                    T::gemm(
                        dout,
                        n,
                        din,
                        T::one(),
                        gy,
                        1,
                        dout as isize,
                        xv.data(),
                        din as isize,
                        1,
                        T::one(),
                        dw,
                        din as isize,
                        1,
                    );
                }
                if wants(*b) {
                    let db = slot(&mut grads, *b, &[dout]);
                    for row in gy.chunks_exact(dout) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d = *d + g;
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, stride } => {
                let (xv, wv) = (&values[*x], &values[*w]);
                let g = ConvGeom::new(xv.shape(), wv.shape(), &node.shape, *stride);
                let Aux::Col(col) = &aux[id] else {
                    unreachable!("conv column cache is kept when gradients are requested")
                };
                let np = g.np();
                let p = g.ho * g.wo;
                let mut dmat = vec![T::zero(); g.o * np];
                for ni in 0..g.n {
                    for oc in 0..g.o {
                        dmat[oc * np + ni * p..oc * np + (ni + 1) * p]
                            .copy_from_slice(&gy[(ni * g.o + oc) * p..(ni * g.o + oc + 1) * p]);
                    }
                }
                if wants(*w) {
                    let dw = slot(&mut grads, *w, wv.shape());
                    T::gemm(
                        g.o,
                        np,
                        g.ckk(),
                        T::one(),
                        &dmat,
                        np as isize,
                        1,
                        col,
                        1,
                        np as isize,
                        T::one(),
                        dw,
                        g.ckk() as isize,
                        1,
                    );
                }
                if wants(*b) {
                    let db = slot(&mut grads, *b, &[g.o]);
                    for (oc, d) in db.iter_mut().enumerate() {
                        *d = *d + dmat[oc * np..(oc + 1) * np].iter().copied().sum::<T>();
                    }
                }
                if wants(*x) {
                    let mut dcol = vec![T::zero(); g.ckk() * np];
                    T::gemm(
                        g.ckk(),
                        g.o,
                        np,
                        T::one(),
                        wv.data(),
                        1,
                        g.ckk() as isize,
                        &dmat,
                        np as isize,
                        1,
                        T::zero(),
                        &mut dcol,
                        np as isize,
                        1,
                    );
                    let dx = slot(&mut grads, *x, xv.shape());
                    col2im_add(&dcol, &g, dx);
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xv = values[*x].data();
                    let dx = slot(&mut grads, *x, &nodes[*x].shape);
                    for ((d, &g), &v) in dx.iter_mut().zip(gy).zip(xv) {
                        if v > T::zero() {
                            *d = *d + g;
                        }
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                if wants(*x) {
                    let s = &nodes[*x].shape;
                    let hw = s[2] * s[3];
                    let inv = T::from_f64(1.0 / hw as f64);
                    let dx = slot(&mut grads, *x, s);
                    for (chunk, &g) in dx.chunks_exact_mut(hw).zip(gy) {
                        for d in chunk {
                            *d = *d + g * inv;
                        }
                    }
                }
            }
            Op::Flatten(x) => {
                if wants(*x) {
                    let dx = slot(&mut grads, *x, &nodes[*x].shape);
                    for (d, &g) in dx.iter_mut().zip(gy) {
                        *d = *d + g;
                    }
                }
            }
            Op::L2Normalize(x) => {
                if wants(*x) {
                    let y = values[id].data();
                    let Aux::Norms(norms) = &aux[id] else { unreachable!() };
                    let d = node.shape[1];
                    let dx = slot(&mut grads, *x, &nodes[*x].shape);
                    for (r, &norm) in norms.iter().enumerate() {
                        if norm == T::zero() {
                            continue;
                        }
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &gy[r * d..(r + 1) * d];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            let v = &mut dx[r * d + j];
                            *v = *v + (gr[j] - yr[j] * dot) / norm;
                        }
                    }
                }
            }
            Op::LogSumExp(x) => {
                if wants(*x) {
                    let xv = values[*x].data();
                    let y = values[id].data();
                    let d = nodes[*x].shape[1];
                    let dx = slot(&mut grads, *x, &nodes[*x].shape);
                    for r in 0..y.len() {
                        for j in 0..d {
                            let v = &mut dx[r * d + j];
                            *v = *v + gy[r] * (xv[r * d + j] - y[r]).exp();
                        }
                    }
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (&values[*a], &values[*b]);
                let (n, d) = (av.shape()[0], av.shape()[1]);
                let m = bv.shape()[0];
                if wants(*a) {
                    let da = slot(&mut grads, *a, av.shape());
                    T::gemm(
                        n,
                        m,
                        d,
                        T::one(),
                        gy,
                        m as isize,
                        1,
                        bv.data(),
                        d as isize,
                        1,
                        T::one(),
                        da,
                        d as isize,
                        1,
                    );
                }
                if wants(*b) {
                    let db = slot(&mut grads, *b, bv.shape());
                    T::gemm(
                        m,
                        n,
                        d,
                        T::one(),
                        gy,
                        1,
                        m as isize,
                        av.data(),
                        d as isize,
                        1,
                        T::one(),
                        db,
                        d as isize,
                        1,
                    );
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if wants(*a) {
                    let da = slot(&mut grads, *a, &node.shape);
                    for (d, &g) in da.iter_mut().zip(gy) {
                        *d = *d + g;
                    }
                }
                if wants(*b) {
                    let db = slot(&mut grads, *b, &node.shape);
                    for (d, &g) in db.iter_mut().zip(gy) {
                        *d = *d + sign * g;
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = values[*b].data();
                    let da = slot(&mut grads, *a, &node.shape);
                    for ((d, &g), &q) in da.iter_mut().zip(gy).zip(bv) {
                        *d = *d + g * q;
                    }
                }
                if wants(*b) {
                    let av = values[*a].data();
                    let db = slot(&mut grads, *b, &node.shape);
                    for ((d, &g), &p) in db.iter_mut().zip(gy).zip(av) {
                        *d = *d + g * p;
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    let c = T::from_f64(*c);
                    let da = slot(&mut grads, *a, &node.shape);
                    for (d, &g) in da.iter_mut().zip(gy) {
                        *d = *d + g * c;
                    }
                }
            }
            Op::RowSum(x) => {
                if wants(*x) {
                    let d = nodes[*x].shape[1];
                    let dx = slot(&mut grads, *x, &nodes[*x].shape);
                    for (row, &g) in dx.chunks_exact_mut(d).zip(gy) {
                        for v in row {
                            *v = *v + g;
                        }
                    }
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let s = &nodes[*x].shape;
                    let n: usize = s.iter().product();
                    let g = gy[0] / T::from_f64(n as f64);
                    let dx = slot(&mut grads, *x, s);
                    for v in dx {
                        *v = *v + g;
                    }
                }
            }
            Op::SliceRows { x, start, .. } => {
                if wants(*x) {
                    let s = &nodes[*x].shape;
                    let w: usize = s[1..].iter().product();
                    let dx = slot(&mut grads, *x, s);
                    for (d, &g) in dx[start * w..].iter_mut().zip(gy) {
                        *d = *d + g;
                    }
                }
            }
        }
    }
    Ok(out)
}
