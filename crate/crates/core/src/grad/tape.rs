use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;

use super::broadcast::{aligned_strides, broadcast_shape, for_each2, split_axis};
use super::conv::{ConvSpectra, Convolver};
use super::tensor::{numel, Tensor};
use super::GradError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive operations the tape can record.
///
/// Binary elementwise primitives broadcast right-aligned. `Matmul` contracts
/// the last axis of a rank >= 2 left operand with a 2-D right operand. The
/// remaining variants beyond the core arithmetic set are fused kernels used by
/// the sequence layers.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Exp,
    Log,
    Neg,
    Sigmoid,
    Tanh,
    Gelu,
    /// Sum over one axis (removed from the shape), or over everything.
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Slice { axis: usize, start: usize, end: usize },
    Concat { axis: usize },
    Broadcast { shape: Vec<usize> },
    Power { exponent: f64 },
    Sin,
    Cos,
    Reshape { shape: Vec<usize> },
    /// `kernel [H, L]`, `signal [B, L, H]` -> `[B, L, H]`, via FFT.
    CausalConv,
    /// Final time step of [`Primitive::CausalConv`]: `[B, H]`.
    CausalConvLast,
    /// Normalize over the last axis, then scale and shift: `x, gamma, beta`.
    LayerNorm { eps: f64 },
    /// Split the last axis in halves `a | b` and return `a * sigmoid(b)`.
    Glu,
    /// Real impulse response of conjugate-paired diagonal systems.
    ///
    /// Inputs are `[H, P]` tensors `log_re, log_im, w_re, w_im` describing
    /// poles `z = exp(log_re + i log_im)` and residues `w`; the output is
    /// `K[h, l] = 2 Re( sum_p w[h,p] z[h,p]^l )` of shape `[H, length]`.
    SsmKernel { length: usize },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Matmul => "matmul",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Neg => "neg",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Gelu => "gelu",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::Slice { .. } => "slice",
            Primitive::Concat { .. } => "concat",
            Primitive::Broadcast { .. } => "broadcast",
            Primitive::Power { .. } => "power",
            Primitive::Sin => "sin",
            Primitive::Cos => "cos",
            Primitive::Reshape { .. } => "reshape",
            Primitive::CausalConv => "causal_conv",
            Primitive::CausalConvLast => "causal_conv_last",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::Glu => "glu",
            Primitive::SsmKernel { .. } => "ssm_kernel",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Div
            | Primitive::Matmul
            | Primitive::CausalConv
            | Primitive::CausalConvLast => Some(2),
            Primitive::LayerNorm { .. } => Some(3),
            Primitive::SsmKernel { .. } => Some(4),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug)]
enum Saved {
    None,
    Norm { mean: Vec<f64>, rstd: Vec<f64> },
    Spectra(ConvSpectra),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    prim: Option<Primitive>,
    inputs: Vec<Var>,
    requires_grad: bool,
    saved: Saved,
}

/// Define-by-run record of primitive applications.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// nodes that consume them. After [`Tape::backward`], gradients are kept for
/// leaves only.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    conv: Convolver,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            conv: Convolver::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a copy of `tensor` as a leaf; its `requires_grad` flag carries over.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push_leaf(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            tensor.requires_grad(),
        )
    }

    /// Record a value that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push_leaf(shape, tensor.into_data(), false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push_leaf(Vec::new(), vec![value], false)
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            prim: None,
            inputs: Vec::new(),
            requires_grad,
            saved: Saved::None,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(&node.shape, node.value.clone()).expect("node shape is consistent")
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> Result<f64, GradError> {
        let node = &self.nodes[v.0];
        if node.value.len() != 1 {
            return Err(GradError::NotScalar {
                shape: node.shape.clone(),
            });
        }
        Ok(node.value[0])
    }

    /// Gradient of the last backward root with respect to leaf `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Apply `prim` to `inputs`, recording the result.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, GradError> {
        if let Some(arity) = prim.arity() {
            if inputs.len() != arity {
                return Err(GradError::Arity {
                    op: prim.name(),
                    expected: arity,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(GradError::Arity {
                op: prim.name(),
                expected: 1,
                got: 0,
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let (shape, value, saved) = self.evaluate(&prim, inputs, requires_grad)?;
        self.nodes.push(Node {
            shape,
            value,
            prim: Some(prim),
            inputs: inputs.to_vec(),
            requires_grad,
            saved,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn evaluate(
        &mut self,
        prim: &Primitive,
        inputs: &[Var],
        requires_grad: bool,
    ) -> Result<(Vec<usize>, Vec<f64>, Saved), GradError> {
        let nodes = &self.nodes;
        let x = &nodes[inputs[0].0];
        let plain = |shape: Vec<usize>, value: Vec<f64>| Ok((shape, value, Saved::None));
        match prim {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
                let y = &nodes[inputs[1].0];
                let out = broadcast_shape(&x.shape, &y.shape).ok_or_else(|| {
                    GradError::shape(prim.name(), &x.shape, &y.shape)
                })?;
                if matches!(prim, Primitive::Div) && y.value.iter().any(|&d| d == 0.0) {
                    return Err(GradError::Domain {
                        op: "div",
                        detail: "division by zero".into(),
                    });
                }
                let f: fn(f64, f64) -> f64 = match prim {
                    Primitive::Add => |a, b| a + b,
                    Primitive::Sub => |a, b| a - b,
                    Primitive::Mul => |a, b| a * b,
                    _ => |a, b| a / b,
                };
                plain(out.clone(), binary_map(&x.value, &x.shape, &y.value, &y.shape, &out, f))
            }
            Primitive::Matmul => {
                let y = &nodes[inputs[1].0];
                let (rows, k, n) = matmul_dims(&x.shape, &y.shape)?;
                let mut out_shape = x.shape.clone();
                *out_shape.last_mut().unwrap() = n;
                let mut c = vec![0.0; rows * n];
                gemm(rows, k, n, &x.value, (k, 1), &y.value, (n, 1), &mut c, 0.0);
                plain(out_shape, c)
            }
            Primitive::Exp => plain(x.shape.clone(), x.value.iter().map(|v| v.exp()).collect()),
            Primitive::Log => {
                if let Some(bad) = x.value.iter().find(|&&v| v <= 0.0) {
                    return Err(GradError::Domain {
                        op: "log",
                        detail: format!("non-positive argument {bad}"),
                    });
                }
                plain(x.shape.clone(), x.value.iter().map(|v| v.ln()).collect())
            }
            Primitive::Neg => plain(x.shape.clone(), x.value.iter().map(|v| -v).collect()),
            Primitive::Sigmoid => plain(x.shape.clone(), x.value.iter().map(|&v| sigmoid(v)).collect()),
            Primitive::Tanh => plain(x.shape.clone(), x.value.iter().map(|v| v.tanh()).collect()),
            Primitive::Gelu => plain(
                x.shape.clone(),
                x.value.iter().map(|&v| v * normal_cdf(v)).collect(),
            ),
            Primitive::Sin => plain(x.shape.clone(), x.value.iter().map(|v| v.sin()).collect()),
            Primitive::Cos => plain(x.shape.clone(), x.value.iter().map(|v| v.cos()).collect()),
            Primitive::Power { exponent } => {
                let p = *exponent;
                for &v in &x.value {
                    if (v < 0.0 && p.fract() != 0.0) || (v == 0.0 && p < 0.0) {
                        return Err(GradError::Domain {
                            op: "power",
                            detail: format!("{v} raised to {p}"),
                        });
                    }
                }
                plain(x.shape.clone(), x.value.iter().map(|v| v.powf(p)).collect())
            }
            Primitive::Sum { axis } | Primitive::Mean { axis } => {
                let mean = matches!(prim, Primitive::Mean { .. });
                match axis {
                    None => {
                        let n = x.value.len();
                        if mean && n == 0 {
                            return Err(GradError::Domain {
                                op: "mean",
                                detail: "mean of an empty tensor".into(),
                            });
                        }
                        let s: f64 = x.value.iter().sum();
                        plain(Vec::new(), vec![if mean { s / n as f64 } else { s }])
                    }
                    Some(axis) => {
                        check_axis(prim.name(), &x.shape, *axis)?;
                        let (outer, n, inner) = split_axis(&x.shape, *axis);
                        let mut out = vec![0.0; outer * inner];
                        for o in 0..outer {
                            for k in 0..n {
                                let row = &x.value[(o * n + k) * inner..(o * n + k + 1) * inner];
                                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                                    *acc += v;
                                }
                            }
                        }
                        if mean {
                            let scale = 1.0 / n as f64;
                            out.iter_mut().for_each(|v| *v *= scale);
                        }
                        let mut shape = x.shape.clone();
                        shape.remove(*axis);
                        plain(shape, out)
                    }
                }
            }
            Primitive::Slice { axis, start, end } => {
                check_axis("slice", &x.shape, *axis)?;
                if start >= end || *end > x.shape[*axis] {
                    return Err(GradError::Slice {
                        start: *start,
                        end: *end,
                        extent: x.shape[*axis],
                    });
                }
                let (outer, n, inner) = split_axis(&x.shape, *axis);
                let width = end - start;
                let mut out = Vec::with_capacity(outer * width * inner);
                for o in 0..outer {
                    out.extend_from_slice(&x.value[(o * n + start) * inner..(o * n + end) * inner]);
                }
                let mut shape = x.shape.clone();
                shape[*axis] = width;
                plain(shape, out)
            }
            Primitive::Concat { axis } => {
                let first = &x.shape;
                check_axis("concat", first, *axis)?;
                let mut total = 0;
                for v in inputs {
                    let s = &nodes[v.0].shape;
                    let compatible = s.len() == first.len()
                        && s.iter()
                            .zip(first)
                            .enumerate()
                            .all(|(i, (a, b))| i == *axis || a == b);
                    if !compatible {
                        return Err(GradError::shape("concat", first, s));
                    }
                    total += s[*axis];
                }
                let (outer, _, inner) = split_axis(first, *axis);
                let mut out = Vec::with_capacity(outer * total * inner);
                for o in 0..outer {
                    for v in inputs {
                        let node = &nodes[v.0];
                        let n = node.shape[*axis];
                        out.extend_from_slice(&node.value[o * n * inner..(o + 1) * n * inner]);
                    }
                }
                let mut shape = first.clone();
                shape[*axis] = total;
                plain(shape, out)
            }
            Primitive::Broadcast { shape } => {
                match broadcast_shape(&x.shape, shape) {
                    Some(out) if &out == shape => {}
                    _ => return Err(GradError::shape("broadcast", &x.shape, shape)),
                }
                let sa = aligned_strides(&x.shape, shape);
                let zero = vec![0; shape.len()];
                let mut out = vec![0.0; numel(shape)];
                for_each2(shape, &sa, &zero, |o, ia, _| out[o] = x.value[ia]);
                plain(shape.clone(), out)
            }
            Primitive::Reshape { shape } => {
                if numel(shape) != x.value.len() {
                    return Err(GradError::shape("reshape", &x.shape, shape));
                }
                plain(shape.clone(), x.value.clone())
            }
            Primitive::CausalConv | Primitive::CausalConvLast => {
                let k = x;
                let u = &nodes[inputs[1].0];
                let dims = conv_dims(prim.name(), &k.shape, &u.shape)?;
                let (b, l, h) = dims;
                if matches!(prim, Primitive::CausalConvLast) {
                    let mut out = vec![0.0; b * h];
                    for bi in 0..b {
                        for s in 0..l {
                            let row = &u.value[(bi * l + l - 1 - s) * h..(bi * l + l - s) * h];
                            for (hi, (acc, uv)) in out[bi * h..(bi + 1) * h].iter_mut().zip(row).enumerate() {
                                *acc += k.value[hi * l + s] * uv;
                            }
                        }
                    }
                    return plain(vec![b, h], out);
                }
                let (y, spectra) = self.conv.forward(&k.value, &u.value, dims, requires_grad);
                let saved = spectra.map_or(Saved::None, Saved::Spectra);
                Ok((u.shape.clone(), y, saved))
            }
            Primitive::LayerNorm { eps } => {
                let gamma = &nodes[inputs[1].0];
                let beta = &nodes[inputs[2].0];
                let h = *x.shape.last().ok_or_else(|| GradError::shape("layer_norm", &x.shape, &gamma.shape))?;
                if gamma.shape != [h] || beta.shape != [h] {
                    return Err(GradError::shape("layer_norm", &x.shape, &gamma.shape));
                }
                let rows = x.value.len() / h;
                let mut out = vec![0.0; x.value.len()];
                let mut means = Vec::with_capacity(rows);
                let mut rstds = Vec::with_capacity(rows);
                for r in 0..rows {
                    let row = &x.value[r * h..(r + 1) * h];
                    let mean = row.iter().sum::<f64>() / h as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
                    let rstd = 1.0 / (var + eps).sqrt();
                    for j in 0..h {
                        out[r * h + j] = (row[j] - mean) * rstd * gamma.value[j] + beta.value[j];
                    }
                    means.push(mean);
                    rstds.push(rstd);
                }
                let saved = if requires_grad {
                    Saved::Norm { mean: means, rstd: rstds }
                } else {
                    Saved::None
                };
                Ok((x.shape.clone(), out, saved))
            }
            Primitive::SsmKernel { length } => {
                let parts: Vec<&Node> = inputs.iter().map(|v| &nodes[v.0]).collect();
                if x.shape.len() != 2 || parts.iter().any(|p| p.shape != x.shape) {
                    return Err(GradError::shape("ssm_kernel", &x.shape, &parts[3].shape));
                }
                let (h, p) = (x.shape[0], x.shape[1]);
                let mut out = vec![0.0; h * length];
                for (i, (lr, li)) in parts[0].value.iter().zip(&parts[1].value).enumerate() {
                    let z = Complex64::from_polar(lr.exp(), *li);
                    let w = Complex64::new(parts[2].value[i], parts[3].value[i]);
                    let row = &mut out[(i / p) * length..(i / p + 1) * length];
                    let mut zl = Complex64::new(1.0, 0.0);
                    for k in row.iter_mut() {
                        *k += 2.0 * (w * zl).re;
                        zl *= z;
                    }
                }
                plain(vec![h, *length], out)
            }
            Primitive::Glu => {
                let last = *x.shape.last().unwrap_or(&0);
                if last == 0 || last % 2 != 0 {
                    return Err(GradError::shape("glu", &x.shape, &[2]));
                }
                let h = last / 2;
                let rows = x.value.len() / last;
                let mut out = Vec::with_capacity(rows * h);
                for r in 0..rows {
                    let row = &x.value[r * last..(r + 1) * last];
                    for j in 0..h {
                        out.push(row[j] * sigmoid(row[h + j]));
                    }
                }
                let mut shape = x.shape.clone();
                *shape.last_mut().unwrap() = h;
                plain(shape, out)
            }
        }
    }

    /// Reverse sweep from scalar `root`, accumulating into every
    /// `requires_grad` leaf reachable from it.
    pub fn backward(&mut self, root: Var) -> Result<(), GradError> {
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(GradError::NotScalar {
                shape: root_node.shape.clone(),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !root_node.requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let Some(prim) = node.prim.as_ref() else {
                self.grads[i] = Some(g);
                continue;
            };
            let contributions = local_gradients(&self.nodes, node, prim, &g, &mut self.conv);
            for (input, grad) in node.inputs.iter().zip(contributions) {
                let Some(grad) = grad else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut self.grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    // Convenience wrappers.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Div, &[a, b])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Matmul, &[a, b])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn neg(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Neg, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn gelu(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Gelu, &[a])
    }
    pub fn sin(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Sin, &[a])
    }
    pub fn cos(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Cos, &[a])
    }
    pub fn powf(&mut self, a: Var, exponent: f64) -> Result<Var, GradError> {
        self.apply(Primitive::Power { exponent }, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Sum { axis: None }, &[a])
    }
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, GradError> {
        self.apply(Primitive::Sum { axis: Some(axis) }, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Mean { axis: None }, &[a])
    }
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, GradError> {
        self.apply(Primitive::Mean { axis: Some(axis) }, &[a])
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, GradError> {
        self.apply(Primitive::Slice { axis, start, end }, &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, GradError> {
        self.apply(Primitive::Concat { axis }, parts)
    }
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, GradError> {
        self.apply(Primitive::Broadcast { shape: shape.to_vec() }, &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, GradError> {
        self.apply(Primitive::Reshape { shape: shape.to_vec() }, &[a])
    }
    pub fn causal_conv(&mut self, kernel: Var, signal: Var) -> Result<Var, GradError> {
        self.apply(Primitive::CausalConv, &[kernel, signal])
    }
    pub fn causal_conv_last(&mut self, kernel: Var, signal: Var) -> Result<Var, GradError> {
        self.apply(Primitive::CausalConvLast, &[kernel, signal])
    }
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, GradError> {
        self.apply(Primitive::LayerNorm { eps }, &[x, gamma, beta])
    }
    pub fn glu(&mut self, x: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Glu, &[x])
    }
    pub fn ssm_kernel(
        &mut self,
        log_re: Var,
        log_im: Var,
        w_re: Var,
        w_im: Var,
        length: usize,
    ) -> Result<Var, GradError> {
        self.apply(Primitive::SsmKernel { length }, &[log_re, log_im, w_re, w_im])
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, GradError> {
        let c = self.scalar(factor);
        self.mul(a, c)
    }

    /// Add a constant.
    pub fn shift(&mut self, a: Var, offset: f64) -> Result<Var, GradError> {
        let c = self.scalar(offset);
        self.add(a, c)
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn normal_cdf(v: f64) -> f64 {
    0.5 * (1.0 + libm::erf(v * FRAC_1_SQRT_2))
}

fn normal_pdf(v: f64) -> f64 {
    (-0.5 * v * v).exp() / (2.0 * PI).sqrt()
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(), GradError> {
    if axis >= shape.len() {
        return Err(GradError::Axis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize), GradError> {
    if a.len() < 2 || b.len() != 2 || a[a.len() - 1] != b[0] {
        return Err(GradError::shape("matmul", a, b));
    }
    let k = b[0];
    let rows = a[..a.len() - 1].iter().product();
    Ok((rows, k, b[1]))
}

fn conv_dims(op: &'static str, kernel: &[usize], signal: &[usize]) -> Result<(usize, usize, usize), GradError> {
    if kernel.len() != 2 || signal.len() != 3 || kernel[0] != signal[2] || kernel[1] != signal[1] || signal[1] == 0 {
        return Err(GradError::shape(op, kernel, signal));
    }
    Ok((signal[0], signal[1], signal[2]))
}

fn binary_map(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out: &[usize],
    f: fn(f64, f64) -> f64,
) -> Vec<f64> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 && a_shape == out {
        let y = b[0];
        return a.iter().map(|&x| f(x, y)).collect();
    }
    if a.len() == 1 && b_shape == out {
        let x = a[0];
        return b.iter().map(|&y| f(x, y)).collect();
    }
    let sa = aligned_strides(a_shape, out);
    let sb = aligned_strides(b_shape, out);
    let mut res = vec![0.0; numel(out)];
    for_each2(out, &sa, &sb, |o, ia, ib| res[o] = f(a[ia], b[ib]));
    res
}

/// `c = a * b + beta * c` with explicit (row, column) strides for a and b.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the slices cover every index addressed by the given strides:
    // a is m x k, b is k x n and c is m x n row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Gradient of the node's output with respect to each input (None when the
/// input does not need one).
fn local_gradients(
    nodes: &[Node],
    node: &Node,
    prim: &Primitive,
    g: &[f64],
    conv: &mut Convolver,
) -> Vec<Option<Vec<f64>>> {
    let input = |i: usize| &nodes[node.inputs[i].0];
    let wants = |i: usize| input(i).requires_grad;
    let unary = |f: &dyn Fn(usize) -> f64| vec![Some((0..g.len()).map(f).collect::<Vec<f64>>())];
    match prim {
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
            let (a, b) = (input(0), input(1));
            let out = &node.shape;
            let mut ga = wants(0).then(|| vec![0.0; a.value.len()]);
            let mut gb = wants(1).then(|| vec![0.0; b.value.len()]);
            let sa = aligned_strides(&a.shape, out);
            let sb = aligned_strides(&b.shape, out);
            for_each2(out, &sa, &sb, |o, ia, ib| {
                let go = g[o];
                let (da, db) = match prim {
                    Primitive::Add => (go, go),
                    Primitive::Sub => (go, -go),
                    Primitive::Mul => (go * b.value[ib], go * a.value[ia]),
                    _ => {
                        let d = b.value[ib];
                        (go / d, -go * a.value[ia] / (d * d))
                    }
                };
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += db;
                }
            });
            vec![ga, gb]
        }
        Primitive::Matmul => {
            let (a, b) = (input(0), input(1));
            let (rows, k, n) = matmul_dims(&a.shape, &b.shape).expect("validated in forward");
            let ga = wants(0).then(|| {
                let mut ga = vec![0.0; rows * k];
                // dA = G * B^T
                gemm(rows, n, k, g, (n, 1), &b.value, (1, n), &mut ga, 0.0);
                ga
            });
            let gb = wants(1).then(|| {
                let mut gb = vec![0.0; k * n];
                // dB = A^T * G
                gemm(k, rows, n, &a.value, (1, k), g, (n, 1), &mut gb, 0.0);
                gb
            });
            vec![ga, gb]
        }
        Primitive::Exp => unary(&|i| g[i] * node.value[i]),
        Primitive::Log => {
            let x = &input(0).value;
            unary(&|i| g[i] / x[i])
        }
        Primitive::Neg => unary(&|i| -g[i]),
        Primitive::Sigmoid => unary(&|i| {
            let y = node.value[i];
            g[i] * y * (1.0 - y)
        }),
        Primitive::Tanh => unary(&|i| {
            let y = node.value[i];
            g[i] * (1.0 - y * y)
        }),
        Primitive::Gelu => {
            let x = &input(0).value;
            unary(&|i| g[i] * (normal_cdf(x[i]) + x[i] * normal_pdf(x[i])))
        }
        Primitive::Sin => {
            let x = &input(0).value;
            unary(&|i| g[i] * x[i].cos())
        }
        Primitive::Cos => {
            let x = &input(0).value;
            unary(&|i| -g[i] * x[i].sin())
        }
        Primitive::Power { exponent } => {
            let x = &input(0).value;
            let p = *exponent;
            unary(&|i| if p == 0.0 { 0.0 } else { g[i] * p * x[i].powf(p - 1.0) })
        }
        Primitive::Sum { axis } | Primitive::Mean { axis } => {
            let x = input(0);
            let mean = matches!(prim, Primitive::Mean { .. });
            match axis {
                None => {
                    let n = x.value.len();
                    let v = if mean { g[0] / n as f64 } else { g[0] };
                    vec![Some(vec![v; n])]
                }
                Some(axis) => {
                    let (outer, n, inner) = split_axis(&x.shape, *axis);
                    let scale = if mean { 1.0 / n as f64 } else { 1.0 };
                    let mut gx = vec![0.0; x.value.len()];
                    for o in 0..outer {
                        for k in 0..n {
                            let dst = &mut gx[(o * n + k) * inner..(o * n + k + 1) * inner];
                            for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *d = s * scale;
                            }
                        }
                    }
                    vec![Some(gx)]
                }
            }
        }
        Primitive::Slice { axis, start, end } => {
            let x = input(0);
            let (outer, n, inner) = split_axis(&x.shape, *axis);
            let width = end - start;
            let mut gx = vec![0.0; x.value.len()];
            for o in 0..outer {
                gx[(o * n + start) * inner..(o * n + end) * inner]
                    .copy_from_slice(&g[o * width * inner..(o + 1) * width * inner]);
            }
            vec![Some(gx)]
        }
        Primitive::Concat { axis } => {
            let (outer, total, inner) = split_axis(&node.shape, *axis);
            let mut offset = 0;
            node.inputs
                .iter()
                .map(|v| {
                    let part = &nodes[v.0];
                    let n = part.shape[*axis];
                    let res = part.requires_grad.then(|| {
                        let mut gp = Vec::with_capacity(part.value.len());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + n * inner]);
                        }
                        gp
                    });
                    offset += n;
                    res
                })
                .collect()
        }
        Primitive::Broadcast { shape } => {
            let x = input(0);
            let sa = aligned_strides(&x.shape, shape);
            let zero = vec![0; shape.len()];
            let mut gx = vec![0.0; x.value.len()];
            for_each2(shape, &sa, &zero, |o, ia, _| gx[ia] += g[o]);
            vec![Some(gx)]
        }
        Primitive::Reshape { .. } => vec![Some(g.to_vec())],
        Primitive::CausalConv => {
            let (k, u) = (input(0), input(1));
            let dims = (u.shape[0], u.shape[1], u.shape[2]);
            let Saved::Spectra(spectra) = &node.saved else {
                unreachable!("spectra are kept whenever the node requires grad")
            };
            let (du, dk) = conv.backward(g, spectra, dims, wants(1), wants(0));
            let _ = k;
            vec![dk, du]
        }
        Primitive::CausalConvLast => {
            let (k, u) = (input(0), input(1));
            let (b, l, h) = (u.shape[0], u.shape[1], u.shape[2]);
            let mut dk = wants(0).then(|| vec![0.0; h * l]);
            let mut du = wants(1).then(|| vec![0.0; b * l * h]);
            for bi in 0..b {
                for s in 0..l {
                    let t = l - 1 - s;
                    for hi in 0..h {
                        let go = g[bi * h + hi];
                        let ui = (bi * l + t) * h + hi;
                        if let Some(dk) = dk.as_mut() {
                            dk[hi * l + s] += go * u.value[ui];
                        }
                        if let Some(du) = du.as_mut() {
                            du[ui] += go * k.value[hi * l + s];
                        }
                    }
                }
            }
            vec![dk, du]
        }
        Primitive::LayerNorm { .. } => {
            let (x, gamma) = (input(0), input(1));
            let h = gamma.value.len();
            let rows = x.value.len() / h;
            let Saved::Norm { mean, rstd } = &node.saved else {
                unreachable!("statistics are kept whenever the node requires grad")
            };
            let mut gx = wants(0).then(|| vec![0.0; x.value.len()]);
            let mut gg = wants(1).then(|| vec![0.0; h]);
            let mut gbeta = wants(2).then(|| vec![0.0; h]);
            let mut dxhat = vec![0.0; h];
            for r in 0..rows {
                let row = &x.value[r * h..(r + 1) * h];
                let grow = &g[r * h..(r + 1) * h];
                let (mu, rs) = (mean[r], rstd[r]);
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for j in 0..h {
                    let xhat = (row[j] - mu) * rs;
                    if let Some(gg) = gg.as_mut() {
                        gg[j] += grow[j] * xhat;
                    }
                    if let Some(gb) = gbeta.as_mut() {
                        gb[j] += grow[j];
                    }
                    dxhat[j] = grow[j] * gamma.value[j];
                    sum_d += dxhat[j];
                    sum_dx += dxhat[j] * xhat;
                }
                if let Some(gx) = gx.as_mut() {
                    let inv_h = 1.0 / h as f64;
                    for j in 0..h {
                        let xhat = (row[j] - mu) * rs;
                        gx[r * h + j] = rs * (dxhat[j] - sum_d * inv_h - xhat * sum_dx * inv_h);
                    }
                }
            }
            vec![gx, gg, gbeta]
        }
        Primitive::SsmKernel { length } => {
            let (lr, li, wr, wi) = (input(0), input(1), input(2), input(3));
            let p = lr.shape[1];
            let n = lr.value.len();
            let mut grads = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
            for i in 0..n {
                let z = Complex64::from_polar(lr.value[i].exp(), li.value[i]);
                let w = Complex64::new(wr.value[i], wi.value[i]);
                let grow = &g[(i / p) * length..(i / p + 1) * length];
                let mut zl = Complex64::new(1.0, 0.0);
                // d z^l / d log_re = l z^l, d z^l / d log_im = i l z^l
                let (mut d_re, mut d_im, mut d_wr, mut d_wi) = (0.0, 0.0, 0.0, 0.0);
                for (l, go) in grow.iter().enumerate() {
                    let wz = w * zl;
                    let lf = l as f64;
                    d_re += go * 2.0 * lf * wz.re;
                    d_im += go * -2.0 * lf * wz.im;
                    d_wr += go * 2.0 * zl.re;
                    d_wi += go * -2.0 * zl.im;
                    zl *= z;
                }
                grads[0][i] = d_re;
                grads[1][i] = d_im;
                grads[2][i] = d_wr;
                grads[3][i] = d_wi;
            }
            grads
                .into_iter()
                .enumerate()
                .map(|(j, gj)| wants(j).then_some(gj))
                .collect()
        }
        Primitive::Glu => {
            let x = input(0);
            let last = *x.shape.last().unwrap();
            let h = last / 2;
            let rows = x.value.len() / last;
            let mut gx = vec![0.0; x.value.len()];
            for r in 0..rows {
                let row = &x.value[r * last..(r + 1) * last];
                for j in 0..h {
                    let go = g[r * h + j];
                    let s = sigmoid(row[h + j]);
                    gx[r * last + j] = go * s;
                    gx[r * last + h + j] = go * row[j] * s * (1.0 - s);
                }
            }
            vec![Some(gx)]
        }
    }
}
