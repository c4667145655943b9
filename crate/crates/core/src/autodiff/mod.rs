//! Tape-based reverse-mode differentiation over flat arrays.
//!
//! A [`Tape`] records every operation in execution order together with the
//! inputs it needs for its vector-Jacobian product. [`Tape::backward`] walks
//! the record in reverse. Multivector tensors have a trailing axis of 8 and a
//! channel axis just before it; scalar tensors have channels last.

mod check;
mod optim;

pub use check::{grad_check, GradCheckReport};
pub use optim::{cosine_lr, Adam, AdamConfig, Param, ParamId, ParamStore};

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::layers::attention::{attention_backward, attention_forward, AttentionConfig, AttnCache, AttnGrads, AttnGroup, AttnInputs};
use crate::layers::bilinear::{product_backward, product_kernel};
use crate::layers::dense::{dense_backward, dense_forward, relu_backward, relu_kernel};
use crate::layers::linear::{backward_kernel, forward_kernel, PARAMS_PER_PAIR};
use crate::layers::norm::{
    eq_layer_norm_backward, eq_layer_norm_kernel, gated_relu_backward, gated_relu_kernel, layer_norm_backward, layer_norm_kernel,
};
use crate::layers::LayerError;
use crate::pga::tables::{mat_t_vec, mat_vec, ProductTable, GEOMETRIC, INVARIANT_COMPONENTS, JOIN};
use crate::real::Real;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("no vector-Jacobian product registered for op `{op}`")]
    MissingVjp { op: String },
    #[error("backward needs a single-element loss, got {0} elements")]
    NotScalar(usize),
    #[error("cross entropy over an empty set of valid positions")]
    EmptyTargets,
    #[error("target {target} out of range for {classes} classes")]
    TargetRange { target: usize, classes: usize },
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unknown parameter `{0}`")]
    UnknownName(String),
    #[error("state/gradient shape mismatch for parameter `{0}`")]
    ParamShape(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
}

fn shape_err(op: &'static str, detail: impl fmt::Display) -> AutodiffError {
    AutodiffError::Shape { op, detail: detail.to_string() }
}

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a custom op: `(inputs, output, cotangent) -> input cotangents`.
pub type CustomVjp<T> = Box<dyn Fn(&[&[T]], &[T], &[T]) -> Vec<Vec<T>> + Send + Sync>;

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Sum(Var),
    Dot { x: Var, w: Vec<T> },
    Dense { x: Var, w: Var, b: Option<Var>, n: usize, d_in: usize, d_out: usize },
    Relu(Var),
    LayerNorm { x: Var, inv: Vec<f64>, n: usize, c: usize },
    EqLinear { x: Var, w: Var, b: Option<Var>, n: usize, c_in: usize, c_out: usize },
    Product { table: &'static ProductTable, a: Var, b: Var },
    Inner { a: Var, b: Var },
    GatedRelu(Var),
    EqLayerNorm { x: Var, r: Vec<f64>, n: usize, c: usize },
    Columns { x: Var, rows: usize, width_in: usize, start: usize, len: usize },
    ConcatCols { parts: Vec<(Var, usize)>, rows: usize },
    ConcatRows(Vec<Var>),
    Gather { x: Var, idx: Vec<usize>, width: usize },
    Sandwich { x: Var, mats: Arc<Vec<[[f64; 8]; 8]>>, c: usize },
    Attention { ins: [Var; 6], cfg: AttentionConfig, groups: Arc<Vec<AttnGroup>>, cache: AttnCache, nq: usize, nk: usize },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, k: usize, probs: Vec<f64>, count: usize },
    Custom { name: String, inputs: Vec<Var>, vjp: Option<CustomVjp<T>> },
}

impl<T> Op<T> {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Dot { .. } => "dot",
            Op::Dense { .. } => "dense",
            Op::Relu(_) => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::EqLinear { .. } => "eq_linear",
            Op::Product { .. } => "product",
            Op::Inner { .. } => "inner",
            Op::GatedRelu(_) => "gated_relu",
            Op::EqLayerNorm { .. } => "eq_layer_norm",
            Op::Columns { .. } => "slice_channels",
            Op::ConcatCols { .. } => "concat_channels",
            Op::ConcatRows(_) => "concat_rows",
            Op::Gather { .. } => "gather_rows",
            Op::Sandwich { .. } => "sandwich",
            Op::Attention { .. } => "attention",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Custom { name, .. } => name,
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of a leaf or parameter node, if any cotangent reached it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// One dense gradient per parameter of `store`, zero where unreached.
    pub fn dense_params(&self, store: &ParamStore<T>) -> Vec<Vec<T>> {
        store.iter().map(|(id, p)| self.param(id).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); p.data.len()])).collect()
    }
}

pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape that keeps values but records nothing for backward.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn op_name(&self, v: Var) -> &str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, shape: &[usize], data: Vec<T>, requires_grad: bool, op: Op<T>) -> Result<Var, AutodiffError> {
        if numel(shape) != data.len() {
            return Err(shape_err("leaf", format_args!("shape {:?} holds {} values, got {}", shape, numel(shape), data.len())));
        }
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node { shape: shape.to_vec(), value: data, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var, AutodiffError> {
        self.leaf(shape, data, false, Op::Leaf)
    }

    /// A differentiable input.
    pub fn input(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var, AutodiffError> {
        self.leaf(shape, data, true, Op::Leaf)
    }

    /// Copies a parameter from the store onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.leaf(&p.shape, p.data.clone(), true, Op::Param(id)).expect("store shapes are consistent")
    }

    pub fn param_by_name(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var, AutodiffError> {
        let id = store.id(name).ok_or_else(|| AutodiffError::UnknownName(name.to_string()))?;
        Ok(self.param(store, id))
    }

    fn mv_dims(&self, x: Var, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        let s = self.shape(x);
        if s.len() < 2 || s[s.len() - 1] != 8 {
            return Err(shape_err(op, format_args!("expected [.., C, 8], got {:?}", s)));
        }
        let c = s[s.len() - 2];
        let n = if c == 0 { 0 } else { numel(s) / (c * 8) };
        Ok((n, c))
    }

    fn scalar_dims(&self, x: Var, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        let s = self.shape(x);
        if s.is_empty() {
            return Err(shape_err(op, "expected at least one axis"));
        }
        let c = s[s.len() - 1];
        let n = if c == 0 { 0 } else { numel(s) / c };
        Ok((n, c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format_args!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        Ok(self.push(self.shape(a).to_vec(), value, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let ft = T::cast(f);
        let value = self.value(a).iter().map(|x| *x * ft).collect();
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, f), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        if numel(shape) != self.value(a).len() {
            return Err(shape_err("reshape", format_args!("{:?} -> {:?}", self.shape(a), shape)));
        }
        Ok(self.push(shape.to_vec(), self.value(a).to_vec(), Op::Reshape(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().map(|v| v.as_f64()).sum();
        self.push(vec![1], vec![T::cast(s)], Op::Sum(a), &[a])
    }

    /// `Σ_i w_i x_i` with constant weights.
    pub fn dot_const(&mut self, x: Var, w: Vec<T>) -> Result<Var, AutodiffError> {
        if w.len() != self.value(x).len() {
            return Err(shape_err("dot", format_args!("weights {} vs values {}", w.len(), self.value(x).len())));
        }
        let s: f64 = self.value(x).iter().zip(&w).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        Ok(self.push(vec![1], vec![T::cast(s)], Op::Dot { x, w }, &[x]))
    }

    /// `x W + b` with `x: [.., d_in]`, `W: [d_in, d_out]`, `b: [d_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (n, d_in) = self.scalar_dims(x, "dense")?;
        let ws = self.shape(w);
        if ws.len() != 2 || ws[0] != d_in {
            return Err(shape_err("dense", format_args!("input width {} vs weight {:?}", d_in, ws)));
        }
        let d_out = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(shape_err("dense", format_args!("bias {:?} vs width {}", self.shape(b), d_out)));
            }
        }
        let value = dense_forward(self.value(x), n, d_in, d_out, self.value(w), b.map(|b| self.value(b)));
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = d_out;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(shape, value, Op::Dense { x, w, b, n, d_in, d_out }, &ins))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = relu_kernel(self.value(x));
        self.push(self.shape(x).to_vec(), value, Op::Relu(x), &[x])
    }

    /// Layer norm over the last axis, no affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var, AutodiffError> {
        let (n, c) = self.scalar_dims(x, "layer_norm")?;
        let (value, inv) = layer_norm_kernel(self.value(x), n, c, eps);
        Ok(self.push(self.shape(x).to_vec(), value, Op::LayerNorm { x, inv, n, c }, &[x]))
    }

    /// Equivariant linear map with `w: [c_out, c_in, 10]` and optional `b: [c_out]`.
    pub fn eq_linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (n, c_in) = self.mv_dims(x, "eq_linear")?;
        let ws = self.shape(w);
        if ws.len() != 3 || ws[1] != c_in || ws[2] != PARAMS_PER_PAIR {
            return Err(shape_err("eq_linear", format_args!("input channels {} vs weight {:?}", c_in, ws)));
        }
        let c_out = ws[0];
        let zeros;
        let bias = match b {
            Some(b) => {
                if self.shape(b) != [c_out] {
                    return Err(shape_err("eq_linear", format_args!("bias {:?} vs {} outputs", self.shape(b), c_out)));
                }
                self.value(b)
            }
            None => {
                zeros = vec![T::zero(); c_out];
                &zeros
            }
        };
        let value = forward_kernel(self.value(x), n, c_in, c_out, self.value(w), bias);
        let mut shape = self.shape(x).to_vec();
        let l = shape.len();
        shape[l - 2] = c_out;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(shape, value, Op::EqLinear { x, w, b, n, c_in, c_out }, &ins))
    }

    fn product(&mut self, table: &'static ProductTable, a: Var, b: Var, op: &'static str) -> Result<Var, AutodiffError> {
        self.mv_dims(a, op)?;
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format_args!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let value = product_kernel(table, self.value(a), self.value(b));
        Ok(self.push(self.shape(a).to_vec(), value, Op::Product { table, a, b }, &[a, b]))
    }

    pub fn geometric_product(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.product(&GEOMETRIC, a, b, "geometric_product")
    }

    pub fn join(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.product(&JOIN, a, b, "join")
    }

    /// Channel-wise invariant inner product `[.., C, 8] x [.., C, 8] -> [.., C]`.
    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.mv_dims(a, "inner")?;
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("inner", format_args!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let value = self
            .value(a)
            .chunks_exact(8)
            .zip(self.value(b).chunks_exact(8))
            .map(|(x, y)| T::cast(INVARIANT_COMPONENTS.iter().map(|&k| x[k].as_f64() * y[k].as_f64()).sum::<f64>()))
            .collect();
        let s = self.shape(a);
        let shape = s[..s.len() - 1].to_vec();
        Ok(self.push(shape, value, Op::Inner { a, b }, &[a, b]))
    }

    pub fn gated_relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.mv_dims(x, "gated_relu")?;
        let value = gated_relu_kernel(self.value(x));
        Ok(self.push(self.shape(x).to_vec(), value, Op::GatedRelu(x), &[x]))
    }

    pub fn eq_layer_norm(&mut self, x: Var, eps: f64) -> Result<Var, AutodiffError> {
        let (n, c) = self.mv_dims(x, "eq_layer_norm")?;
        let (value, r) = eq_layer_norm_kernel(self.value(x), n, c, eps);
        Ok(self.push(self.shape(x).to_vec(), value, Op::EqLayerNorm { x, r, n, c }, &[x]))
    }

    fn columns(&mut self, x: Var, rows: usize, width_in: usize, start: usize, len: usize, shape: Vec<usize>) -> Var {
        let src = self.value(x);
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&src[r * width_in + start..r * width_in + start + len]);
        }
        self.push(shape, value, Op::Columns { x, rows, width_in, start, len }, &[x])
    }

    /// Channels `start..start + len` of a multivector tensor.
    pub fn slice_mv(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (n, c) = self.mv_dims(x, "slice_channels")?;
        if start + len > c {
            return Err(shape_err("slice_channels", format_args!("{}..{} of {} channels", start, start + len, c)));
        }
        let mut shape = self.shape(x).to_vec();
        let l = shape.len();
        shape[l - 2] = len;
        Ok(self.columns(x, n, c * 8, start * 8, len * 8, shape))
    }

    /// Channels `start..start + len` of a scalar tensor.
    pub fn slice_scalar(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (n, c) = self.scalar_dims(x, "slice_channels")?;
        if start + len > c {
            return Err(shape_err("slice_channels", format_args!("{}..{} of {} channels", start, start + len, c)));
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.columns(x, n, c, start, len, shape))
    }

    fn concat_cols(&mut self, xs: &[Var], width: usize, axis_from_end: usize) -> Result<Var, AutodiffError> {
        let first = *xs.first().ok_or_else(|| shape_err("concat_channels", "no inputs"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() < axis_from_end {
            return Err(shape_err("concat_channels", format_args!("rank of {:?}", s0)));
        }
        let ax = s0.len() - axis_from_end;
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != s0.len() || s[..ax] != s0[..ax] || s[ax + 1..] != s0[ax + 1..] {
                return Err(shape_err("concat_channels", format_args!("{:?} vs {:?}", s0, s)));
            }
            total += s[ax];
        }
        let rows = numel(&s0[..ax]);
        let parts: Vec<(Var, usize)> = xs.iter().map(|&x| (x, self.shape(x)[ax] * width)).collect();
        let mut value = Vec::with_capacity(rows * total * width);
        for r in 0..rows {
            for &(x, w) in &parts {
                value.extend_from_slice(&self.value(x)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = s0;
        shape[ax] = total;
        Ok(self.push(shape, value, Op::ConcatCols { parts, rows }, xs))
    }

    pub fn concat_mv(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        for &x in xs {
            self.mv_dims(x, "concat_channels")?;
        }
        self.concat_cols(xs, 8, 2)
    }

    pub fn concat_scalar(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        self.concat_cols(xs, 1, 1)
    }

    /// Stacks along the first axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        let first = *xs.first().ok_or_else(|| shape_err("concat_rows", "no inputs"))?;
        let s0 = self.shape(first).to_vec();
        if s0.is_empty() {
            return Err(shape_err("concat_rows", "scalar input"));
        }
        let mut rows = 0;
        let mut value = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.len() != s0.len() || s[1..] != s0[1..] {
                return Err(shape_err("concat_rows", format_args!("{:?} vs {:?}", s0, s)));
            }
            rows += s[0];
            value.extend_from_slice(self.value(x));
        }
        let mut shape = s0;
        shape[0] = rows;
        Ok(self.push(shape, value, Op::ConcatRows(xs.to_vec()), xs))
    }

    /// Selects rows along the first axis (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || s[0] == 0 {
            return Err(shape_err("gather_rows", format_args!("cannot gather from {:?}", s)));
        }
        let width = numel(&s[1..]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
            return Err(shape_err("gather_rows", format_args!("row {} of {}", bad, s[0])));
        }
        let src = self.value(x);
        let mut value = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            value.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut shape = s;
        shape[0] = idx.len();
        Ok(self.push(shape, value, Op::Gather { x, idx: idx.to_vec(), width }, &[x]))
    }

    /// Per-token sandwich with constant motors, given as one 8x8 matrix per token.
    pub fn sandwich(&mut self, x: Var, mats: Arc<Vec<[[f64; 8]; 8]>>) -> Result<Var, AutodiffError> {
        let (n, c) = self.mv_dims(x, "sandwich")?;
        if mats.len() != n {
            return Err(shape_err("sandwich", format_args!("{} motors for {} tokens", mats.len(), n)));
        }
        let src = self.value(x);
        let mut value = vec![T::zero(); src.len()];
        for t in 0..n {
            for ch in 0..c {
                let o = (t * c + ch) * 8;
                let mut xv = [0.0f64; 8];
                for k in 0..8 {
                    xv[k] = src[o + k].as_f64();
                }
                let y = mat_vec(&mats[t], &xv);
                for k in 0..8 {
                    value[o + k] = T::cast(y[k]);
                }
            }
        }
        Ok(self.push(self.shape(x).to_vec(), value, Op::Sandwich { x, mats, c }, &[x]))
    }

    /// Grouped multivector attention; returns `(mv_out, scalar_out)` shaped like the queries.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        mv_q: Var,
        mv_k: Var,
        mv_v: Var,
        s_q: Var,
        s_k: Var,
        s_v: Var,
        cfg: &AttentionConfig,
        groups: Arc<Vec<AttnGroup>>,
    ) -> Result<(Var, Var), AutodiffError> {
        let (nq, cq) = self.mv_dims(mv_q, "attention")?;
        let (nk, ck) = self.mv_dims(mv_k, "attention")?;
        if cq != cfg.mv_channels || ck != cfg.mv_channels || self.shape(mv_v) != self.shape(mv_k) {
            return Err(shape_err("attention", "multivector channel mismatch"));
        }
        let (sq, cs) = self.scalar_dims(s_q, "attention")?;
        if sq != nq || cs != cfg.scalar_channels || self.shape(s_k) != self.shape(s_v) || self.scalar_dims(s_k, "attention")? != (nk, cs) {
            return Err(shape_err("attention", "scalar shape mismatch"));
        }
        let inp = AttnInputs {
            mv_q: self.value(mv_q),
            mv_k: self.value(mv_k),
            mv_v: self.value(mv_v),
            s_q: self.value(s_q),
            s_k: self.value(s_k),
            s_v: self.value(s_v),
            nq,
            nk,
        };
        let (om, os, cache) = attention_forward(cfg, &inp, &groups)?;
        let ins = [mv_q, mv_k, mv_v, s_q, s_k, s_v];
        let requires_grad = self.grad_enabled && ins.iter().any(|v| self.nodes[v.0].requires_grad);
        let mv_shape = self.shape(mv_q).to_vec();
        let s_shape = self.shape(s_q).to_vec();
        if !requires_grad {
            let a = self.push(mv_shape, om, Op::Leaf, &[]);
            let b = self.push(s_shape, os, Op::Leaf, &[]);
            return Ok((a, b));
        }
        // The fused op produces both outputs in one node; the scalar half is
        // exposed through a column slice so each output keeps its own shape.
        let n_mv = om.len();
        let mut joined = om;
        joined.extend(os);
        let node = self.push(vec![joined.len()], joined, Op::Attention { ins, cfg: *cfg, groups, cache, nq, nk }, &ins);
        let len = self.value(node).len();
        let a = self.columns(node, 1, len, 0, n_mv, mv_shape);
        let b = self.columns(node, 1, len, n_mv, len - n_mv, s_shape);
        Ok((a, b))
    }

    /// Mean cross entropy over rows with a target; `logits: [n, k]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, AutodiffError> {
        let (n, k) = self.scalar_dims(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(shape_err("cross_entropy", format_args!("{} targets for {} rows", targets.len(), n)));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(AutodiffError::EmptyTargets);
        }
        if let Some(&t) = targets.iter().flatten().find(|&&t| t >= k) {
            return Err(AutodiffError::TargetRange { target: t, classes: k });
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0f64; n * k];
        let mut total = 0.0f64;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = t else { continue };
            let row = &lv[r * k..(r + 1) * k];
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (v.as_f64() - max).exp();
                z += *p;
            }
            probs[r * k..(r + 1) * k].iter_mut().for_each(|p| *p /= z);
            total += max + z.ln() - row[*t].as_f64();
        }
        let loss = total / count as f64;
        Ok(self.push(vec![1], vec![T::cast(loss)], Op::CrossEntropy { logits, targets: targets.to_vec(), k, probs, count }, &[logits]))
    }

    /// Records an externally computed value. Without a `vjp`, backward fails
    /// with [`AutodiffError::MissingVjp`] if a cotangent reaches this node.
    pub fn custom(
        &mut self,
        name: &str,
        inputs: &[Var],
        shape: &[usize],
        value: Vec<T>,
        vjp: Option<CustomVjp<T>>,
    ) -> Result<Var, AutodiffError> {
        if numel(shape) != value.len() {
            return Err(shape_err("custom", format_args!("shape {:?} vs {} values", shape, value.len())));
        }
        let op = Op::Custom { name: name.to_string(), inputs: inputs.to_vec(), vjp };
        Ok(self.push(shape.to_vec(), value, op, inputs))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var, loss_cotangent: T) -> Result<Grads<T>, AutodiffError> {
        let len = self.value(loss).len();
        if len != 1 {
            return Err(AutodiffError::NotScalar(len));
        }
        let mut g: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(vec![loss_cotangent]);
        let mut params: Vec<Option<Vec<T>>> = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let gi = match &node.op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    if let Some(gv) = &g[i] {
                        if params.len() <= id.0 {
                            params.resize_with(id.0 + 1, || None);
                        }
                        accumulate(&mut params[id.0], gv);
                    }
                    continue;
                }
                _ => match g[i].take() {
                    Some(v) => v,
                    None => continue,
                },
            };
            self.node_vjp(&node.op, &node.value, &gi, &mut g)?;
        }
        Ok(Grads { nodes: g, params })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn buf(&self, g: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
        if !self.wants(v) {
            return None;
        }
        Some(g[v.0].take().unwrap_or_else(|| vec![T::zero(); self.value(v).len()]))
    }

    fn node_vjp(&self, op: &Op<T>, out: &[T], gi: &[T], g: &mut [Option<Vec<T>>]) -> Result<(), AutodiffError> {
        // Buffers are taken out of `g` and put back, so an input used twice
        // by one op simply accumulates both contributions.
        macro_rules! put {
            ($v:expr, $b:expr) => {
                if let Some(b) = $b {
                    put_back(&mut g[$v.0], b);
                }
            };
        }
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(mut buf) = self.buf(g, v) {
                        buf.iter_mut().zip(gi).for_each(|(d, x)| *d += *x);
                        put!(v, Some(buf));
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(mut buf) = self.buf(g, *a) {
                    let ft = T::cast(*f);
                    buf.iter_mut().zip(gi).for_each(|(d, x)| *d += *x * ft);
                    put!(*a, Some(buf));
                }
            }
            Op::Reshape(a) => {
                if let Some(mut buf) = self.buf(g, *a) {
                    buf.iter_mut().zip(gi).for_each(|(d, x)| *d += *x);
                    put!(*a, Some(buf));
                }
            }
            Op::Sum(a) => {
                if let Some(mut buf) = self.buf(g, *a) {
                    buf.iter_mut().for_each(|d| *d += gi[0]);
                    put!(*a, Some(buf));
                }
            }
            Op::Dot { x, w } => {
                if let Some(mut buf) = self.buf(g, *x) {
                    buf.iter_mut().zip(w).for_each(|(d, wv)| *d += gi[0] * *wv);
                    put!(*x, Some(buf));
                }
            }
            Op::Dense { x, w, b, n, d_in, d_out } => {
                let mut gx = self.buf(g, *x);
                let mut gw = self.buf(g, *w);
                let mut gb = b.and_then(|b| self.buf(g, b));
                dense_backward(
                    self.value(*x),
                    gi,
                    *n,
                    *d_in,
                    *d_out,
                    self.value(*w),
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                put!(*x, gx);
                put!(*w, gw);
                if let Some(b) = b {
                    put!(*b, gb);
                }
            }
            Op::Relu(x) => {
                if let Some(mut buf) = self.buf(g, *x) {
                    relu_backward(self.value(*x), gi, &mut buf);
                    put!(*x, Some(buf));
                }
            }
            Op::LayerNorm { x, inv, n, c } => {
                if let Some(mut buf) = self.buf(g, *x) {
                    layer_norm_backward(out, gi, inv, *n, *c, &mut buf);
                    put!(*x, Some(buf));
                }
            }
            Op::EqLinear { x, w, b, n, c_in, c_out } => {
                let mut gx = self.buf(g, *x);
                let mut gw = self.buf(g, *w);
                let mut gb = b.and_then(|b| self.buf(g, b));
                backward_kernel(
                    self.value(*x),
                    gi,
                    *n,
                    *c_in,
                    *c_out,
                    self.value(*w),
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                put!(*x, gx);
                put!(*w, gw);
                if let Some(b) = b {
                    put!(*b, gb);
                }
            }
            Op::Product { table, a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                product_backward(table, av, bv, gi, &mut ga, &mut gb);
                if self.wants(*a) {
                    put!(*a, Some(ga));
                }
                if self.wants(*b) {
                    put!(*b, Some(gb));
                }
            }
            Op::Inner { a, b } => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if let Some(mut buf) = self.buf(g, v) {
                        let ov = self.value(other);
                        for (t, gv) in gi.iter().enumerate() {
                            for &k in INVARIANT_COMPONENTS.iter() {
                                buf[t * 8 + k] += *gv * ov[t * 8 + k];
                            }
                        }
                        put!(v, Some(buf));
                    }
                }
            }
            Op::GatedRelu(x) => {
                if let Some(mut buf) = self.buf(g, *x) {
                    gated_relu_backward(self.value(*x), gi, &mut buf);
                    put!(*x, Some(buf));
                }
            }
            Op::EqLayerNorm { x, r, n, c } => {
                if let Some(mut buf) = self.buf(g, *x) {
                    eq_layer_norm_backward(self.value(*x), gi, r, *n, *c, &mut buf);
                    put!(*x, Some(buf));
                }
            }
            Op::Columns { x, rows, width_in, start, len } => {
                if let Some(mut buf) = self.buf(g, *x) {
                    for r in 0..*rows {
                        let dst = &mut buf[r * width_in + start..r * width_in + start + len];
                        dst.iter_mut().zip(&gi[r * len..(r + 1) * len]).for_each(|(d, v)| *d += *v);
                    }
                    put!(*x, Some(buf));
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut off = 0;
                for &(x, w) in parts {
                    if let Some(mut buf) = self.buf(g, x) {
                        for r in 0..*rows {
                            let src = &gi[r * total + off..r * total + off + w];
                            buf[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(d, v)| *d += *v);
                        }
                        put!(x, Some(buf));
                    }
                    off += w;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = self.value(x).len();
                    if let Some(mut buf) = self.buf(g, x) {
                        buf.iter_mut().zip(&gi[off..off + len]).for_each(|(d, v)| *d += *v);
                        put!(x, Some(buf));
                    }
                    off += len;
                }
            }
            Op::Gather { x, idx, width } => {
                if let Some(mut buf) = self.buf(g, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        let dst = &mut buf[i * width..(i + 1) * width];
                        dst.iter_mut().zip(&gi[r * width..(r + 1) * width]).for_each(|(d, v)| *d += *v);
                    }
                    put!(*x, Some(buf));
                }
            }
            Op::Sandwich { x, mats, c } => {
                if let Some(mut buf) = self.buf(g, *x) {
                    for (t, m) in mats.iter().enumerate() {
                        for ch in 0..*c {
                            let o = (t * c + ch) * 8;
                            let mut gv = [0.0f64; 8];
                            for k in 0..8 {
                                gv[k] = gi[o + k].as_f64();
                            }
                            let d = mat_t_vec(m, &gv);
                            for k in 0..8 {
                                buf[o + k] += T::cast(d[k]);
                            }
                        }
                    }
                    put!(*x, Some(buf));
                }
            }
            Op::Attention { ins, cfg, groups, cache, nq, nk } => {
                let inp = AttnInputs {
                    mv_q: self.value(ins[0]),
                    mv_k: self.value(ins[1]),
                    mv_v: self.value(ins[2]),
                    s_q: self.value(ins[3]),
                    s_k: self.value(ins[4]),
                    s_v: self.value(ins[5]),
                    nq: *nq,
                    nk: *nk,
                };
                let mut bufs: Vec<Vec<T>> = ins.iter().map(|v| vec![T::zero(); self.value(*v).len()]).collect();
                let n_mv = nq * cfg.mv_channels * 8;
                let [b0, b1, b2, b3, b4, b5] = &mut bufs[..] else { unreachable!() };
                let mut grads = AttnGrads { mv_q: b0, mv_k: b1, mv_v: b2, s_q: b3, s_k: b4, s_v: b5 };
                attention_backward(cfg, &inp, groups, cache, &gi[..n_mv], &gi[n_mv..], &mut grads);
                for (v, b) in ins.iter().zip(bufs) {
                    if self.wants(*v) {
                        put!(*v, Some(b));
                    }
                }
            }
            Op::CrossEntropy { logits, targets, k, probs, count } => {
                if let Some(mut buf) = self.buf(g, *logits) {
                    let scale = gi[0].as_f64() / *count as f64;
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for j in 0..*k {
                            let onehot = if j == *t { 1.0 } else { 0.0 };
                            buf[r * k + j] += T::cast(scale * (probs[r * k + j] - onehot));
                        }
                    }
                    put!(*logits, Some(buf));
                }
            }
            Op::Custom { name, inputs, vjp } => {
                let vjp = vjp.as_ref().ok_or_else(|| AutodiffError::MissingVjp { op: name.clone() })?;
                let vals: Vec<&[T]> = inputs.iter().map(|v| self.value(*v)).collect();
                let outs = vjp(&vals, out, gi);
                if outs.len() != inputs.len() {
                    return Err(shape_err(
                        "custom",
                        format_args!("`{}` returned {} cotangents for {} inputs", name, outs.len(), inputs.len()),
                    ));
                }
                for (v, d) in inputs.iter().zip(outs) {
                    if d.len() != self.value(*v).len() {
                        return Err(shape_err("custom", format_args!("`{}` cotangent length mismatch", name)));
                    }
                    if self.wants(*v) {
                        put!(*v, Some(d));
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(s) => s.iter_mut().zip(g).for_each(|(d, v)| *d += *v),
        None => *slot = Some(g.to_vec()),
    }
}

fn put_back<T: Real>(slot: &mut Option<Vec<T>>, buf: Vec<T>) {
    match slot {
        Some(s) => s.iter_mut().zip(&buf).for_each(|(d, v)| *d += *v),
        None => *slot = Some(buf),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_product_gradient_masks_degenerate_components() {
        // d/dx <x, x> = 2 x on [1, e1, e2, e12] and zero on e0, e01, e20, e012.
        let mut tape = Tape::<f64>::new();
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let x = tape.input(&[1, 8], xs.to_vec()).unwrap();
        let ip = tape.inner(x, x).unwrap();
        let s = tape.sum(ip);
        let grads = tape.backward(s, 1.0).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 0.0, 6.0, 8.0, 0.0, 0.0, 14.0, 0.0]);
    }

    #[test]
    fn identity_linear_passes_cotangent() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[2, 1, 8], (0..16).map(|i| i as f64).collect()).unwrap();
        let w = tape.constant(&[1, 1, 10], vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let y = tape.eq_linear(x, w, None).unwrap();
        let r: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let l = tape.dot_const(y, r.clone()).unwrap();
        assert_eq!(tape.backward(l, 1.0).unwrap().get(x).unwrap(), &r[..]);
    }

    #[test]
    fn missing_vjp_names_op() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[1], vec![2.0]).unwrap();
        let y = tape.custom("mystery", &[x], &[1], vec![4.0], None).unwrap();
        let err = tape.backward(y, 1.0).err().unwrap();
        assert_eq!(err, AutodiffError::MissingVjp { op: "mystery".into() });
        assert!(alloc::format!("{err}").contains("mystery"));
    }

    #[test]
    fn custom_vjp_runs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[1], vec![3.0]).unwrap();
        let vjp: CustomVjp<f64> = Box::new(|ins, _out, g| vec![vec![2.0 * ins[0][0] * g[0]]]);
        let y = tape.custom("square", &[x], &[1], vec![9.0], Some(vjp)).unwrap();
        assert_eq!(tape.backward(y, 1.0).unwrap().get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn reused_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[2], vec![1.0, -2.0]).unwrap();
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        assert_eq!(tape.backward(s, 1.0).unwrap().get(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform() {
        let mut tape = Tape::<f64>::new();
        let l = tape.input(&[2, 64], vec![0.0; 128]).unwrap();
        let loss = tape.cross_entropy(l, &[Some(3), None]).unwrap();
        assert!((tape.value(loss)[0] - 64f64.ln()).abs() < 1e-12);
        assert!(tape.cross_entropy(l, &[None, None]).is_err());
    }

    #[test]
    fn inference_tape_records_no_ops() {
        let mut tape = Tape::<f64>::inference();
        let x = tape.input(&[2], vec![1.0, 2.0]).unwrap();
        let y = tape.relu(x);
        assert_eq!(tape.op_name(y), "leaf");
    }
}
