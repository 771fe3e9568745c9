//! Define-by-run reverse-mode differentiation over real n-d arrays.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are stored
//! in creation order, which is already a topological order, so the backward
//! sweep simply walks the node list in reverse. Layers and the quantum layer
//! plug in their own derivative rules through [`Backward`].

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Trans};

/// Dense row-major array of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Array {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Array{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Array{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Scalar value of a one-element array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub(crate) fn add_assign(&mut self, other: &Array) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a derivative rule may look at.
pub struct BackwardContext<'a> {
    pub inputs: Vec<&'a Array>,
    pub output: &'a Array,
    pub grad_output: &'a Array,
    /// Which inputs actually need a gradient; others may be returned as `None`.
    pub needs_grad: Vec<bool>,
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, shaped like that input.
    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>>;
}

struct Node {
    value: Array,
    requires_grad: bool,
    parents: Vec<Var>,
    rule: Option<Box<dyn Backward>>,
}

/// Computation record for one forward pass. Confined to one thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing flowed to it.
    pub fn get_or_zeros(&self, var: Var, like: &Array) -> Array {
        self.get(var).cloned().unwrap_or_else(|| Array::zeros(like.shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push_leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Array, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, parents: Vec::new(), rule: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Array {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records an operation whose forward value was computed by the caller
    /// and whose derivative is given by `rule`.
    pub fn record(&mut self, inputs: &[Var], value: Array, rule: Box<dyn Backward>) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::Numeric(format!("{} produced a non-finite value", rule.name())));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, parents: inputs.to_vec(), rule: Some(rule) });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::Parameter(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array::filled(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(grad_output) = grads[idx].take() else { continue };
            let needs_grad: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let ctx = BackwardContext {
                inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                output: &node.value,
                grad_output: &grad_output,
                needs_grad,
            };
            let input_grads = rule.backward(&ctx)?;
            for ((parent, grad), needed) in node.parents.iter().zip(input_grads).zip(&ctx.needs_grad) {
                let (Some(grad), true) = (grad, *needed) else { continue };
                if grad.shape() != self.nodes[parent.0].value.shape() {
                    return Err(Error::Shape(format!(
                        "{} returned gradient {:?} for input {:?}",
                        rule.name(),
                        grad.shape(),
                        self.nodes[parent.0].value.shape()
                    )));
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            }
            grads[idx] = Some(grad_output);
        }
        Ok(Gradients { grads })
    }
}

fn same_shape(op: &str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

struct AddRule;

impl Backward for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        Ok(vec![Some(ctx.grad_output.clone()), Some(ctx.grad_output.clone())])
    }
}

struct MulRule;

impl Backward for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_output);
        let times = |other: &Array| {
            let data = g.data().iter().zip(other.data()).map(|(x, y)| x * y).collect();
            Array { shape: g.shape().to_vec(), data }
        };
        Ok(vec![ctx.needs_grad[0].then(|| times(b)), ctx.needs_grad[1].then(|| times(a))])
    }
}

struct ScaleRule(f64);

impl Backward for ScaleRule {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let data = ctx.grad_output.data().iter().map(|g| g * self.0).collect();
        Ok(vec![Some(Array { shape: ctx.grad_output.shape().to_vec(), data })])
    }
}

struct MatMulRule;

impl Backward for MatMulRule {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_output);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let ga = ctx.needs_grad[0].then(|| {
            let mut out = Array::zeros(&[m, k]);
            gemm(m, n, k, 1.0, g.data(), Trans::No, b.data(), Trans::Yes, 0.0, out.data_mut());
            out
        });
        let gb = ctx.needs_grad[1].then(|| {
            let mut out = Array::zeros(&[k, n]);
            gemm(k, m, n, 1.0, a.data(), Trans::Yes, g.data(), Trans::No, 0.0, out.data_mut());
            out
        });
        Ok(vec![ga, gb])
    }
}

struct ReshapeRule;

impl Backward for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        Ok(vec![Some(ctx.grad_output.clone().reshaped(ctx.inputs[0].shape())?)])
    }
}

struct SliceLastRule(Range<usize>);

impl Backward for SliceLastRule {
    fn name(&self) -> &'static str {
        "slice"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let input = ctx.inputs[0];
        let last = input.last_dim();
        let width = self.0.len();
        let mut out = Array::zeros(input.shape());
        for (row_out, row_g) in out.data_mut().chunks_mut(last).zip(ctx.grad_output.data().chunks(width)) {
            row_out[self.0.clone()].copy_from_slice(row_g);
        }
        Ok(vec![Some(out)])
    }
}

struct ConcatLastRule;

impl Backward for ConcatLastRule {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let total = ctx.grad_output.last_dim();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(ctx.inputs.len());
        for (input, needed) in ctx.inputs.iter().zip(&ctx.needs_grad) {
            let width = input.last_dim();
            if *needed {
                let mut g = Array::zeros(input.shape());
                for (dst, src) in g.data_mut().chunks_mut(width).zip(ctx.grad_output.data().chunks(total)) {
                    dst.copy_from_slice(&src[offset..offset + width]);
                }
                grads.push(Some(g));
            } else {
                grads.push(None);
            }
            offset += width;
        }
        Ok(grads)
    }
}

struct SumRule {
    scale: f64,
}

impl Backward for SumRule {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let g = ctx.grad_output.item() * self.scale;
        Ok(vec![Some(Array::filled(ctx.inputs[0].shape(), g))])
    }
}

/// Elementwise map with a pointwise derivative.
struct MapRule {
    derivative: Vec<f64>,
}

impl Backward for MapRule {
    fn name(&self) -> &'static str {
        "map"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let data = ctx.grad_output.data().iter().zip(&self.derivative).map(|(g, d)| g * d).collect();
        Ok(vec![Some(Array { shape: ctx.grad_output.shape().to_vec(), data })])
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Array { shape: x.shape().to_vec(), data };
        self.record(&[a, b], value, Box::new(AddRule))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Array { shape: x.shape().to_vec(), data };
        self.record(&[a, b], value, Box::new(MulRule))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let x = self.value(a);
        let value = Array { shape: x.shape().to_vec(), data: x.data().iter().map(|v| v * factor).collect() };
        self.record(&[a], value, Box::new(ScaleRule(factor)))
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(Error::Shape(format!("matmul: {:?} · {:?}", x.shape(), y.shape())));
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let mut value = Array::zeros(&[m, n]);
        gemm(m, k, n, 1.0, x.data(), Trans::No, y.data(), Trans::No, 0.0, value.data_mut());
        self.record(&[a, b], value, Box::new(MatMulRule))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        self.record(&[a], value, Box::new(ReshapeRule))
    }

    /// Keeps the leading dimension and flattens the rest.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape();
        let lead = shape.first().copied().unwrap_or(1);
        let rest = self.value(a).len() / lead.max(1);
        self.reshape(a, &[lead, rest])
    }

    /// Slices `range` out of the last dimension.
    pub fn slice_last(&mut self, a: Var, range: Range<usize>) -> Result<Var> {
        let x = self.value(a);
        let last = x.last_dim();
        if x.ndim() == 0 || range.start > range.end || range.end > last {
            return Err(Error::Shape(format!("slice {range:?} out of last dimension {last}")));
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = range.len();
        let mut data = Vec::with_capacity(x.len() / last.max(1) * range.len());
        for row in x.data().chunks(last) {
            data.extend_from_slice(&row[range.clone()]);
        }
        let value = Array { shape, data };
        self.record(&[a], value, Box::new(SliceLastRule(range)))
    }

    /// Concatenates along the last dimension; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Parameter("concat of nothing".into()))?;
        let lead = self.value(*first).shape()[..self.value(*first).ndim().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let v = self.value(*p);
            if v.ndim() == 0 || v.shape()[..v.ndim() - 1] != lead[..] {
                return Err(Error::Shape(format!("concat: {:?} incompatible with leading {lead:?}", v.shape())));
            }
            widths.push(v.last_dim());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.record(parts, Array { shape, data }, Box::new(ConcatLastRule))
    }

    /// Splits the last dimension into `k` equal parts.
    pub fn split_last(&mut self, a: Var, k: usize) -> Result<Vec<Var>> {
        let last = self.value(a).last_dim();
        if k == 0 || last % k != 0 {
            return Err(Error::Shape(format!("cannot split last dimension {last} into {k} parts")));
        }
        let width = last / k;
        (0..k).map(|i| self.slice_last(a, i * width..(i + 1) * width)).collect()
    }

    pub fn reduce_sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.record(&[a], Array::scalar(total), Box::new(SumRule { scale: 1.0 }))
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Shape("mean of an empty array".into()));
        }
        let n = x.len() as f64;
        let mean = x.data().iter().sum::<f64>() / n;
        self.record(&[a], Array::scalar(mean), Box::new(SumRule { scale: 1.0 / n }))
    }

    /// Elementwise `f` with derivative `df`.
    pub fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let derivative = x.data().iter().map(|&v| df(v)).collect();
        let value = Array { shape: x.shape().to_vec(), data };
        self.record(&[a], value, Box::new(MapRule { derivative }))
    }
}
