use std::fmt;
use std::sync::Arc;

use super::kernels::{self, axis_blocks, is_suffix, ops, sigmoid, softplus};
use super::Tensor;
use crate::error::{Error, Result};

/// Target id skipped by [`Primitive::CrossEntropy`].
pub const IGNORE_INDEX: usize = usize::MAX;

/// Differentiable operations understood by the tape.
///
/// Binary elementwise kinds broadcast only when one operand's shape is a
/// trailing run of the other's (a scalar is the empty run).
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Softplus,
    Sigmoid,
    Silu,
    Tanh,
    Relu,
    SoftmaxLastDim,
    /// Normalization over the last axis, without affine terms.
    LayerNorm {
        eps: f64,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Concat {
        axis: usize,
    },
    Transpose {
        dim0: usize,
        dim1: usize,
    },
    Reshape {
        shape: Vec<usize>,
    },
    /// `None` reduces to a scalar; `Some(axis)` removes that axis.
    ReduceSum {
        axis: Option<usize>,
    },
    ReduceMean {
        axis: Option<usize>,
    },
    /// Selects rows along axis 0.
    Gather {
        indices: Arc<[usize]>,
    },
    /// Mean negative log-likelihood of `targets` under softmax of the last
    /// axis. Rows whose target is [`IGNORE_INDEX`] do not contribute.
    CrossEntropy {
        targets: Arc<[usize]>,
    },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Neg => "neg",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sqrt => "sqrt",
            Primitive::Softplus => "softplus",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Silu => "silu",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::SoftmaxLastDim => "softmax-lastdim",
            Primitive::LayerNorm { .. } => "layernorm",
            Primitive::Slice { .. } => "slice",
            Primitive::Concat { .. } => "concat",
            Primitive::Transpose { .. } => "transpose",
            Primitive::Reshape { .. } => "reshape",
            Primitive::ReduceSum { .. } => "reduce-sum",
            Primitive::ReduceMean { .. } => "reduce-mean",
            Primitive::Gather { .. } => "gather",
            Primitive::CrossEntropy { .. } => "cross-entropy",
        }
    }

    /// Look a primitive up by name. Kinds that need arguments get their
    /// defaults: layernorm eps 1e-5, transpose of axes 0 and 1, full
    /// reductions, concatenation along axis 0.
    pub fn from_name(name: &str) -> Result<Primitive> {
        Ok(match name {
            "matmul" => Primitive::MatMul,
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "div" => Primitive::Div,
            "neg" => Primitive::Neg,
            "exp" => Primitive::Exp,
            "log" => Primitive::Log,
            "sqrt" => Primitive::Sqrt,
            "softplus" => Primitive::Softplus,
            "sigmoid" => Primitive::Sigmoid,
            "silu" => Primitive::Silu,
            "tanh" => Primitive::Tanh,
            "relu" => Primitive::Relu,
            "softmax-lastdim" => Primitive::SoftmaxLastDim,
            "layernorm" => Primitive::LayerNorm { eps: 1e-5 },
            "concat" => Primitive::Concat { axis: 0 },
            "transpose" => Primitive::Transpose { dim0: 0, dim1: 1 },
            "reduce-sum" => Primitive::ReduceSum { axis: None },
            "reduce-mean" => Primitive::ReduceMean { axis: None },
            "slice" | "reshape" | "gather" | "cross-entropy" => {
                return Err(Error::InvalidArgument(format!("primitive `{name}` needs explicit arguments")))
            }
            other => return Err(Error::UnknownPrimitive(other.to_string())),
        })
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => Some(2),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }

    pub(crate) fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        match self.arity() {
            Some(n) if inputs.len() != n => {
                return Err(Error::InvalidArgument(format!("{} takes {n} inputs, got {}", self.name(), inputs.len())))
            }
            None if inputs.is_empty() => return Err(Error::Empty("concat inputs")),
            _ => {}
        }
        let x = inputs[0];
        match self {
            Primitive::MatMul => matmul_forward(x, inputs[1]),
            Primitive::Add => binary(self, x, inputs[1], |a, b| a + b),
            Primitive::Sub => binary(self, x, inputs[1], |a, b| a - b),
            Primitive::Mul => binary(self, x, inputs[1], |a, b| a * b),
            Primitive::Div => binary(self, x, inputs[1], |a, b| a / b),
            Primitive::Neg => Ok(unary(x, |v| -v)),
            Primitive::Exp => Ok(unary(x, f64::exp)),
            Primitive::Log => Ok(unary(x, f64::ln)),
            Primitive::Sqrt => Ok(unary(x, f64::sqrt)),
            Primitive::Softplus => Ok(unary(x, softplus)),
            Primitive::Sigmoid => Ok(unary(x, sigmoid)),
            Primitive::Silu => Ok(unary(x, |v| v * sigmoid(v))),
            Primitive::Tanh => Ok(unary(x, f64::tanh)),
            Primitive::Relu => Ok(unary(x, |v| v.max(0.0))),
            Primitive::SoftmaxLastDim => softmax_forward(x),
            Primitive::LayerNorm { eps } => layernorm_forward(x, *eps),
            Primitive::Slice { axis, start, len } => slice_forward(x, *axis, *start, *len),
            Primitive::Concat { axis } => concat_forward(inputs, *axis),
            Primitive::Transpose { dim0, dim1 } => transpose_forward(x, *dim0, *dim1),
            Primitive::Reshape { shape } => x.reshaped(shape),
            Primitive::ReduceSum { axis } => reduce_forward(x, *axis, false),
            Primitive::ReduceMean { axis } => reduce_forward(x, *axis, true),
            Primitive::Gather { indices } => gather_forward(x, indices),
            Primitive::CrossEntropy { targets } => cross_entropy_forward(x, targets),
        }
    }

    /// Input gradients given the upstream gradient of the output. Entries are
    /// `None` where `needs` is false.
    pub(crate) fn backward(
        &self,
        inputs: &[Tensor],
        output: &Tensor,
        grad: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let x = &inputs[0];
        let one = |g: Vec<f64>| vec![needs[0].then_some(g)];
        match self {
            Primitive::MatMul => matmul_backward(x, &inputs[1], grad, needs),
            Primitive::Add => binary_backward(x, &inputs[1], grad, needs, |g, _, _| (g, g)),
            Primitive::Sub => binary_backward(x, &inputs[1], grad, needs, |g, _, _| (g, -g)),
            Primitive::Mul => binary_backward(x, &inputs[1], grad, needs, |g, a, b| (g * b, g * a)),
            Primitive::Div => binary_backward(x, &inputs[1], grad, needs, |g, a, b| (g / b, -g * a / (b * b))),
            Primitive::Neg => one(grad.iter().map(|g| -g).collect()),
            Primitive::Exp => one(zip_map(grad, output.data(), |g, y| g * y)),
            Primitive::Log => one(zip_map(grad, x.data(), |g, v| g / v)),
            Primitive::Sqrt => one(zip_map(grad, output.data(), |g, y| 0.5 * g / y)),
            Primitive::Softplus => one(zip_map(grad, x.data(), |g, v| g * sigmoid(v))),
            Primitive::Sigmoid => one(zip_map(grad, output.data(), |g, y| g * y * (1.0 - y))),
            Primitive::Silu => one(zip_map(grad, x.data(), |g, v| {
                let s = sigmoid(v);
                g * s * (1.0 + v * (1.0 - s))
            })),
            Primitive::Tanh => one(zip_map(grad, output.data(), |g, y| g * (1.0 - y * y))),
            Primitive::Relu => one(zip_map(grad, x.data(), |g, v| if v > 0.0 { g } else { 0.0 })),
            Primitive::SoftmaxLastDim => one(softmax_backward(output, grad)),
            Primitive::LayerNorm { eps } => one(layernorm_backward(x, output, grad, *eps)),
            Primitive::Slice { axis, start, len } => one(slice_backward(x.shape(), *axis, *start, *len, grad)),
            Primitive::Concat { axis } => concat_backward(inputs, *axis, grad, needs),
            Primitive::Transpose { dim0, dim1 } => one(transpose_data(grad, output.shape(), *dim0, *dim1)),
            Primitive::Reshape { .. } => one(grad.to_vec()),
            Primitive::ReduceSum { axis } => one(reduce_backward(x.shape(), *axis, grad, false)),
            Primitive::ReduceMean { axis } => one(reduce_backward(x.shape(), *axis, grad, true)),
            Primitive::Gather { indices } => one(gather_backward(x, indices, grad)),
            Primitive::CrossEntropy { targets } => one(cross_entropy_backward(x, targets, grad[0])),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    ops::add(x.numel() as u64);
    x.map(f)
}

fn zip_map(g: &[f64], v: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    ops::add(g.len() as u64);
    g.iter().zip(v).map(|(&g, &v)| f(g, v)).collect()
}

fn binary(p: &Primitive, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let (ad, bd) = (a.data(), b.data());
    ops::add(ad.len().max(bd.len()) as u64);
    if a.shape() == b.shape() {
        let data = ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::raw(a.shape().to_vec(), data));
    }
    if is_suffix(a.shape(), b.shape()) {
        let nb = bd.len();
        let data = ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect();
        Ok(Tensor::raw(a.shape().to_vec(), data))
    } else if is_suffix(b.shape(), a.shape()) {
        let na = ad.len();
        let data = bd.iter().enumerate().map(|(i, &y)| f(ad[i % na], y)).collect();
        Ok(Tensor::raw(b.shape().to_vec(), data))
    } else {
        Err(Error::shape(p.name(), &[a.shape(), b.shape()]))
    }
}

fn binary_backward(
    a: &Tensor,
    b: &Tensor,
    grad: &[f64],
    needs: &[bool],
    f: impl Fn(f64, f64, f64) -> (f64, f64),
) -> Vec<Option<Vec<f64>>> {
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let mut ga = needs[0].then(|| vec![0.0; na]);
    let mut gb = needs[1].then(|| vec![0.0; nb]);
    ops::add(2 * grad.len() as u64);
    for (i, &g) in grad.iter().enumerate() {
        let (ia, ib) = (i % na, i % nb);
        let (da, db) = f(g, ad[ia], bd[ib]);
        if let Some(ga) = ga.as_mut() {
            ga[ia] += da;
        }
        if let Some(gb) = gb.as_mut() {
            gb[ib] += db;
        }
    }
    vec![ga, gb]
}

struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatMulDims> {
    let bad = || Error::shape("matmul", &[a, b]);
    if a.len() < 2 || b.len() < 2 {
        return Err(bad());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return Err(bad());
    }
    let shared_rhs = b.len() == 2;
    if !shared_rhs && a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(bad());
    }
    let batch = a[..a.len() - 2].iter().product();
    let mut out_shape = a[..a.len() - 2].to_vec();
    out_shape.extend([m, n]);
    Ok(MatMulDims { batch, m, k, n, shared_rhs, out_shape })
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = matmul_dims(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; d.batch * d.m * d.n];
    if d.shared_rhs {
        kernels::gemm_nn(ad, bd, &mut out, d.batch * d.m, d.k, d.n);
    } else {
        let (sa, sb, so) = (d.m * d.k, d.k * d.n, d.m * d.n);
        for i in 0..d.batch {
            kernels::gemm_nn(
                &ad[i * sa..(i + 1) * sa],
                &bd[i * sb..(i + 1) * sb],
                &mut out[i * so..(i + 1) * so],
                d.m,
                d.k,
                d.n,
            );
        }
    }
    Ok(Tensor::raw(d.out_shape, out))
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
    let d = matmul_dims(a.shape(), b.shape()).expect("validated in forward");
    let (ad, bd) = (a.data(), b.data());
    let mut ga = needs[0].then(|| vec![0.0; ad.len()]);
    let mut gb = needs[1].then(|| vec![0.0; bd.len()]);
    if d.shared_rhs {
        let rows = d.batch * d.m;
        if let Some(ga) = ga.as_mut() {
            kernels::gemm_nt(g, bd, ga, rows, d.n, d.k);
        }
        if let Some(gb) = gb.as_mut() {
            kernels::gemm_tn(ad, g, gb, rows, d.k, d.n);
        }
    } else {
        let (sa, sb, so) = (d.m * d.k, d.k * d.n, d.m * d.n);
        for i in 0..d.batch {
            let gi = &g[i * so..(i + 1) * so];
            if let Some(ga) = ga.as_mut() {
                kernels::gemm_nt(gi, &bd[i * sb..(i + 1) * sb], &mut ga[i * sa..(i + 1) * sa], d.m, d.n, d.k);
            }
            if let Some(gb) = gb.as_mut() {
                kernels::gemm_tn(&ad[i * sa..(i + 1) * sa], gi, &mut gb[i * sb..(i + 1) * sb], d.m, d.k, d.n);
            }
        }
    }
    vec![ga, gb]
}

fn last_dim(x: &Tensor, op: &'static str) -> Result<usize> {
    x.shape().last().copied().ok_or_else(|| Error::shape(op, &[x.shape()]))
}

fn softmax_forward(x: &Tensor) -> Result<Tensor> {
    let n = last_dim(x, "softmax-lastdim")?;
    let mut out = x.to_vec();
    ops::add(3 * out.len() as u64);
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(Tensor::raw(x.shape().to_vec(), out))
}

fn softmax_backward(y: &Tensor, g: &[f64]) -> Vec<f64> {
    let n = *y.shape().last().unwrap();
    let mut out = vec![0.0; g.len()];
    ops::add(4 * g.len() as u64);
    for ((yr, gr), or) in y.data().chunks(n).zip(g.chunks(n)).zip(out.chunks_mut(n)) {
        let s = kernels::dot(yr, gr);
        for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - s);
        }
    }
    out
}

fn layernorm_forward(x: &Tensor, eps: f64) -> Result<Tensor> {
    let n = last_dim(x, "layernorm")?;
    let mut out = x.to_vec();
    ops::add(5 * out.len() as u64);
    for row in out.chunks_mut(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    Ok(Tensor::raw(x.shape().to_vec(), out))
}

fn layernorm_backward(x: &Tensor, y: &Tensor, g: &[f64], eps: f64) -> Vec<f64> {
    let n = *x.shape().last().unwrap();
    let mut out = vec![0.0; g.len()];
    ops::add(8 * g.len() as u64);
    for (((xr, yr), gr), or) in x.data().chunks(n).zip(y.data().chunks(n)).zip(g.chunks(n)).zip(out.chunks_mut(n)) {
        let mean = xr.iter().sum::<f64>() / n as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let gmean = gr.iter().sum::<f64>() / n as f64;
        let gymean = kernels::dot(gr, yr) / n as f64;
        for ((o, &gv), &yv) in or.iter_mut().zip(gr).zip(yr) {
            *o = inv * (gv - gmean - yv * gymean);
        }
    }
    out
}

fn slice_forward(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() || len == 0 || start + len > shape[axis] {
        return Err(Error::shape("slice", &[shape, &[axis, start, len]]));
    }
    let (outer, extent, inner) = axis_blocks(shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    let d = x.data();
    for o in 0..outer {
        let base = o * extent * inner + start * inner;
        out.extend_from_slice(&d[base..base + len * inner]);
    }
    let mut s = shape.to_vec();
    s[axis] = len;
    Ok(Tensor::raw(s, out))
}

fn slice_backward(shape: &[usize], axis: usize, start: usize, len: usize, g: &[f64]) -> Vec<f64> {
    let (outer, extent, inner) = axis_blocks(shape, axis);
    let mut out = vec![0.0; outer * extent * inner];
    for o in 0..outer {
        let base = o * extent * inner + start * inner;
        out[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

fn concat_forward(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = inputs[0].shape();
    let bad = || Error::ShapeMismatch { op: "concat", shapes: inputs.iter().map(|t| t.shape().to_vec()).collect() };
    if axis >= first.len() {
        return Err(bad());
    }
    for t in inputs {
        let s = t.shape();
        if s.len() != first.len() || s.iter().zip(first).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(bad());
        }
    }
    let (outer, _, inner) = axis_blocks(first, axis);
    let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in inputs {
            let e = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * e..(o + 1) * e]);
        }
    }
    let mut s = first.to_vec();
    s[axis] = total;
    Ok(Tensor::raw(s, out))
}

fn concat_backward(inputs: &[Tensor], axis: usize, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
    let (outer, _, inner) = axis_blocks(inputs[0].shape(), axis);
    let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut grads: Vec<Option<Vec<f64>>> =
        inputs.iter().zip(needs).map(|(t, &n)| n.then(|| Vec::with_capacity(t.numel()))).collect();
    for o in 0..outer {
        let mut off = o * total * inner;
        for (t, gr) in inputs.iter().zip(grads.iter_mut()) {
            let e = t.shape()[axis] * inner;
            if let Some(gr) = gr {
                gr.extend_from_slice(&g[off..off + e]);
            }
            off += e;
        }
    }
    grads
}

/// Swap axes `d0` and `d1` of row-major `data`.
pub(crate) fn transpose_data(data: &[f64], shape: &[usize], d0: usize, d1: usize) -> Vec<f64> {
    let (d0, d1) = (d0.min(d1), d0.max(d1));
    if d0 == d1 {
        return data.to_vec();
    }
    let a: usize = shape[..d0].iter().product();
    let (s0, s1) = (shape[d0], shape[d1]);
    let m: usize = shape[d0 + 1..d1].iter().product();
    let z: usize = shape[d1 + 1..].iter().product();
    let mut out = vec![0.0; data.len()];
    // in[a, i, m, j, z] -> out[a, j, m, i, z]
    for ai in 0..a {
        for i in 0..s0 {
            for mi in 0..m {
                for j in 0..s1 {
                    let src = (((ai * s0 + i) * m + mi) * s1 + j) * z;
                    let dst = (((ai * s1 + j) * m + mi) * s0 + i) * z;
                    out[dst..dst + z].copy_from_slice(&data[src..src + z]);
                }
            }
        }
    }
    out
}

fn transpose_forward(x: &Tensor, d0: usize, d1: usize) -> Result<Tensor> {
    let shape = x.shape();
    if d0 >= shape.len() || d1 >= shape.len() {
        return Err(Error::shape("transpose", &[shape, &[d0, d1]]));
    }
    let mut s = shape.to_vec();
    s.swap(d0, d1);
    Ok(Tensor::raw(s, transpose_data(x.data(), shape, d0, d1)))
}

fn reduce_forward(x: &Tensor, axis: Option<usize>, mean: bool) -> Result<Tensor> {
    ops::add(x.numel() as u64);
    match axis {
        None => {
            let s: f64 = x.data().iter().sum();
            Ok(Tensor::scalar(if mean { s / x.numel() as f64 } else { s }))
        }
        Some(axis) => {
            let shape = x.shape();
            if axis >= shape.len() {
                return Err(Error::shape(if mean { "reduce-mean" } else { "reduce-sum" }, &[shape, &[axis]]));
            }
            let (outer, extent, inner) = axis_blocks(shape, axis);
            let mut out = vec![0.0; outer * inner];
            let d = x.data();
            for o in 0..outer {
                let dst = &mut out[o * inner..(o + 1) * inner];
                for e in 0..extent {
                    let src = &d[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                    for (a, &b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
            if mean {
                out.iter_mut().for_each(|v| *v /= extent as f64);
            }
            let mut s = shape.to_vec();
            s.remove(axis);
            Ok(Tensor::raw(s, out))
        }
    }
}

fn reduce_backward(shape: &[usize], axis: Option<usize>, g: &[f64], mean: bool) -> Vec<f64> {
    let numel: usize = shape.iter().product();
    match axis {
        None => {
            let v = if mean { g[0] / numel as f64 } else { g[0] };
            vec![v; numel]
        }
        Some(axis) => {
            let (outer, extent, inner) = axis_blocks(shape, axis);
            let scale = if mean { 1.0 / extent as f64 } else { 1.0 };
            let mut out = Vec::with_capacity(numel);
            for o in 0..outer {
                let src = &g[o * inner..(o + 1) * inner];
                for _ in 0..extent {
                    out.extend(src.iter().map(|v| v * scale));
                }
            }
            out
        }
    }
}

fn gather_forward(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let shape = x.shape();
    if shape.is_empty() || indices.is_empty() || indices.iter().any(|&i| i >= shape[0]) {
        return Err(Error::shape("gather", &[shape, &[indices.len()]]));
    }
    let row: usize = shape[1..].iter().product();
    let d = x.data();
    let mut out = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        out.extend_from_slice(&d[i * row..(i + 1) * row]);
    }
    let mut s = shape.to_vec();
    s[0] = indices.len();
    Ok(Tensor::raw(s, out))
}

fn gather_backward(x: &Tensor, indices: &[usize], g: &[f64]) -> Vec<f64> {
    let row: usize = x.shape()[1..].iter().product();
    let mut out = vec![0.0; x.numel()];
    for (r, &i) in indices.iter().enumerate() {
        for (o, &v) in out[i * row..(i + 1) * row].iter_mut().zip(&g[r * row..(r + 1) * row]) {
            *o += v;
        }
    }
    out
}

fn cross_entropy_rows(x: &Tensor, targets: &[usize]) -> Result<usize> {
    let v = last_dim(x, "cross-entropy")?;
    let rows = x.numel() / v;
    if rows != targets.len() || targets.iter().any(|&t| t != IGNORE_INDEX && t >= v) {
        return Err(Error::shape("cross-entropy", &[x.shape(), &[targets.len()]]));
    }
    Ok(v)
}

fn cross_entropy_forward(x: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let v = cross_entropy_rows(x, targets)?;
    ops::add(3 * x.numel() as u64);
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, &t) in x.data().chunks(v).zip(targets) {
        if t == IGNORE_INDEX {
            continue;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|r| (r - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
        count += 1;
    }
    Ok(Tensor::scalar(if count == 0 { 0.0 } else { total / count as f64 }))
}

fn cross_entropy_backward(x: &Tensor, targets: &[usize], g: f64) -> Vec<f64> {
    let v = *x.shape().last().unwrap();
    let count = targets.iter().filter(|&&t| t != IGNORE_INDEX).count().max(1);
    let scale = g / count as f64;
    let mut out = vec![0.0; x.numel()];
    ops::add(3 * x.numel() as u64);
    for ((row, o), &t) in x.data().chunks(v).zip(out.chunks_mut(v)).zip(targets) {
        if t == IGNORE_INDEX {
            continue;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|r| (r - max).exp()).sum();
        for (ov, &r) in o.iter_mut().zip(row) {
            *ov = scale * (r - max).exp() / sum;
        }
        o[t] -= scale;
    }
    out
}
