//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Calling
//! [`Var::backward`] on a scalar walks the tape in reverse and returns the
//! accumulated [`Gradients`]. A tape is built per forward pass and dropped
//! after the backward pass; it is confined to one thread.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    ScaleBy(usize, usize),
    AddScalarVar(usize, usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    GatherRows(usize, Rc<Vec<usize>>),
    Reshape(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm(usize, f64),
    Gelu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Log(usize),
    LogSigmoid(usize),
    Grl(usize, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf that receives a gradient.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }
}

fn same_tape(a: &Var, b: &Var) -> bool {
    std::ptr::eq(a.tape, b.tape)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.value(self.id))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn dims2(&self) -> (usize, usize) {
        self.tape.value(self.id).dims2()
    }

    /// First element; intended for scalar results.
    pub fn item(&self) -> f64 {
        self.tape.value(self.id).data()[0]
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.needs(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn check_tape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        if same_tape(self, other) {
            Ok(())
        } else {
            Err(Error::Invalid(format!("{op}: operands live on different tapes")))
        }
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.check_tape(other, "matmul")?;
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
            Tensor::new(&[m, n], out)?
        };
        Ok(self.binary(other, value, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value(self.id);
            if a.shape().len() != 2 {
                return Err(Error::shape("transpose", a.shape(), &[]));
            }
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let src = a.data();
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = src[i * c + j];
                }
            }
            Tensor::new(&[c, r], out)?
        };
        Ok(self.unary(value, Op::Transpose(self.id)))
    }

    fn zip_same(&self, other: &Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_tape(other, op)?;
        let a = self.tape.value(self.id);
        let b = self.tape.value(other.id);
        if a.shape() != b.shape() {
            return Err(Error::shape(op, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape(), data)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_same(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_same(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_same(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    fn row_broadcast(&self, row: &Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_tape(row, op)?;
        let a = self.tape.value(self.id);
        let b = self.tape.value(row.id);
        let (_, c) = a.dims2();
        if b.numel() != c {
            return Err(Error::shape(op, a.shape(), b.shape()));
        }
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % c]))
            .collect();
        Tensor::new(a.shape(), data)
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let v = self.row_broadcast(row, "add_row", |x, y| x + y)?;
        Ok(self.binary(row, v, Op::AddRow(self.id, row.id)))
    }

    /// Multiplies every row of an `[m, n]` matrix by a length-`n` vector.
    pub fn mul_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let v = self.row_broadcast(row, "mul_row", |x, y| x * y)?;
        Ok(self.binary(row, v, Op::MulRow(self.id, row.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.map_value(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_const(&self, c: f64) -> Var<'t> {
        let v = self.map_value(|x| x + c);
        self.unary(v, Op::AddConst(self.id))
    }

    fn scalar_of(&self, s: &Var<'t>, op: &'static str) -> Result<f64> {
        self.check_tape(s, op)?;
        let sv = self.tape.value(s.id);
        if sv.numel() != 1 {
            return Err(Error::shape(op, &self.shape(), sv.shape()));
        }
        Ok(sv.data()[0])
    }

    /// Multiplies by a single-element variable.
    pub fn scale_by(&self, s: &Var<'t>) -> Result<Var<'t>> {
        let c = self.scalar_of(s, "scale_by")?;
        let v = self.map_value(|x| x * c);
        Ok(self.binary(s, v, Op::ScaleBy(self.id, s.id)))
    }

    /// Adds a single-element variable to every entry.
    pub fn add_scalar_var(&self, s: &Var<'t>) -> Result<Var<'t>> {
        let c = self.scalar_of(s, "add_scalar_var")?;
        let v = self.map_value(|x| x + c);
        Ok(self.binary(s, v, Op::AddScalarVar(self.id, s.id)))
    }

    fn map_value(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let a = self.tape.value(self.id);
        let data = a.data().iter().map(|&x| f(x)).collect();
        Tensor::new(a.shape(), data).expect("same length")
    }

    pub fn sum(&self) -> Var<'t> {
        let s: f64 = self.tape.value(self.id).data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Mean over all entries. The mean of an empty tensor is 0.
    pub fn mean(&self) -> Var<'t> {
        let a = self.tape.value(self.id);
        let n = a.numel();
        let s = if n == 0 {
            0.0
        } else {
            a.data().iter().sum::<f64>() / n as f64
        };
        drop(a);
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Column means of an `[m, n]` matrix, as a `[1, n]` row.
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value(self.id);
            let (r, c) = a.dims2();
            if r == 0 {
                return Err(Error::Invalid("mean_rows of an empty matrix".into()));
            }
            let mut out = vec![0.0; c];
            for row in a.data().chunks(c) {
                for (o, &x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            Tensor::new(&[1, c], out)?
        };
        Ok(self.unary(value, Op::MeanRows(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Rows `[start, end)` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value(self.id);
            let (r, c) = a.dims2();
            if start > end || end > r {
                return Err(Error::shape("slice_rows", a.shape(), &[start, end]));
            }
            Tensor::new(&[end - start, c], a.data()[start * c..end * c].to_vec())?
        };
        Ok(self.unary(value, Op::SliceRows(self.id, start)))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value(self.id);
            let (r, c) = a.dims2();
            if start > end || end > c {
                return Err(Error::shape("slice_cols", a.shape(), &[start, end]));
            }
            let w = end - start;
            let mut out = Vec::with_capacity(r * w);
            for row in a.data().chunks(c.max(1)).take(r) {
                out.extend_from_slice(&row[start..end]);
            }
            Tensor::new(&[r, w], out)?
        };
        Ok(self.unary(value, Op::SliceCols(self.id, start)))
    }

    /// Row lookup, e.g. an embedding table indexed by token ids.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value(self.id);
            let (r, c) = a.dims2();
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                if i >= r {
                    return Err(Error::shape("gather_rows", a.shape(), &[i]));
                }
                out.extend_from_slice(&a.data()[i * c..(i + 1) * c]);
            }
            Tensor::new(&[indices.len(), c], out)?
        };
        Ok(self.unary(value, Op::GatherRows(self.id, Rc::new(indices.to_vec()))))
    }

    pub fn softmax(&self) -> Var<'t> {
        let v = self.rowwise(|row, out| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - m).exp();
                z += *o;
            }
            out.iter_mut().for_each(|o| *o /= z);
        });
        self.unary(v, Op::Softmax(self.id))
    }

    /// Row softmax where entries with `visible[i] == false` get probability exactly 0.
    /// Every row must keep at least one visible entry.
    pub fn masked_softmax(&self, visible: &[bool]) -> Result<Var<'t>> {
        let (r, c) = self.dims2();
        if visible.len() != r * c {
            return Err(Error::shape("masked_softmax", &[r, c], &[visible.len()]));
        }
        let value = {
            let a = self.tape.value(self.id);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                let row = &a.data()[i * c..(i + 1) * c];
                let vis = &visible[i * c..(i + 1) * c];
                let m = row
                    .iter()
                    .zip(vis)
                    .filter(|(_, &v)| v)
                    .map(|(&x, _)| x)
                    .fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return Err(Error::Invalid(format!("masked_softmax: row {i} fully masked")));
                }
                let o = &mut out[i * c..(i + 1) * c];
                let mut z = 0.0;
                for j in 0..c {
                    if vis[j] {
                        o[j] = (row[j] - m).exp();
                        z += o[j];
                    }
                }
                o.iter_mut().for_each(|x| *x /= z);
            }
            Tensor::new(a.shape(), out)?
        };
        // Masked entries are exact zeros, so the plain softmax backward rule applies.
        Ok(self.unary(value, Op::Softmax(self.id)))
    }

    pub fn log_softmax(&self) -> Var<'t> {
        let v = self.rowwise(|row, out| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            for (o, &x) in out.iter_mut().zip(row) {
                *o = x - lse;
            }
        });
        self.unary(v, Op::LogSoftmax(self.id))
    }

    /// Row normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&self, eps: f64) -> Var<'t> {
        let v = self.rowwise(|row, out| {
            let (mu, rstd) = moments(row, eps);
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - mu) * rstd;
            }
        });
        self.unary(v, Op::LayerNorm(self.id, eps))
    }

    fn rowwise(&self, f: impl Fn(&[f64], &mut [f64])) -> Tensor {
        let a = self.tape.value(self.id);
        let (r, c) = a.dims2();
        let mut out = vec![0.0; r * c];
        if c > 0 {
            for (row, o) in a.data().chunks(c).zip(out.chunks_mut(c)) {
                f(row, o);
            }
        }
        Tensor::new(a.shape(), out).expect("same length")
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Var<'t> {
        let v = self.map_value(|x| 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh()));
        self.unary(v, Op::Gelu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.map_value(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        let v = self.map_value(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn log(&self) -> Var<'t> {
        let v = self.map_value(f64::ln);
        self.unary(v, Op::Log(self.id))
    }

    /// Numerically stable `ln(sigmoid(x))`.
    pub fn log_sigmoid(&self) -> Var<'t> {
        let v = self.map_value(log_sigmoid);
        self.unary(v, Op::LogSigmoid(self.id))
    }

    /// Gradient reversal: identity forward, `-lambda * g` backward.
    pub fn grl(&self, lambda: f64) -> Result<Var<'t>> {
        if !lambda.is_finite() {
            return Err(Error::NonFinite(format!("grl lambda {lambda}")));
        }
        let v = self.value();
        Ok(self.unary(v, Op::Grl(self.id, lambda)))
    }

    /// Backpropagates from this single-element variable.
    pub fn backward(&self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        if nodes[self.id].value.numel() != 1 {
            return Err(Error::shape("backward", nodes[self.id].value.shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.id + 1];
        grads[self.id] = Some(vec![1.0]);
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backward_node(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Invalid("concat_rows of nothing".into()))?;
    let tape = first.tape;
    let value = {
        let (_, c) = first.dims2();
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            first.check_tape(p, "concat_rows")?;
            let v = tape.value(p.id);
            let (r, pc) = v.dims2();
            if pc != c {
                return Err(Error::shape("concat_rows", &[c], v.shape()));
            }
            rows += r;
            out.extend_from_slice(v.data());
        }
        Tensor::new(&[rows, c], out)?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.needs(&ids);
    Ok(tape.push(value, Op::ConcatRows(ids), rg))
}

pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Invalid("concat_cols of nothing".into()))?;
    let tape = first.tape;
    let value = {
        let (r, _) = first.dims2();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            first.check_tape(p, "concat_cols")?;
            let (pr, pc) = p.dims2();
            if pr != r {
                return Err(Error::shape("concat_cols", &[r], &p.shape()));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        let values: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| tape.value(p.id)).collect();
        for i in 0..r {
            for (v, &w) in values.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
            }
        }
        Tensor::new(&[r, total], out)?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.needs(&ids);
    Ok(tape.push(value, Op::ConcatCols(ids), rg))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, 1.0 / (var + eps).sqrt())
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn backward_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |i: usize| &nodes[i].value;
    let rg = |i: usize| nodes[i].requires_grad;
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = val(*b).shape()[1];
            if rg(*a) {
                accumulate(grads, *a, m * k, |ga| gemm(m, n, k, g, false, val(*b).data(), true, ga, true));
            }
            if rg(*b) {
                accumulate(grads, *b, k * n, |gb| gemm(k, m, n, val(*a).data(), true, g, false, gb, true));
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
            accumulate(grads, *a, r * c, |ga| {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::Add(a, b) => {
            for &p in &[*a, *b] {
                if rg(p) {
                    accumulate(grads, p, g.len(), |gp| add_into(gp, g));
                }
            }
        }
        Op::Sub(a, b) => {
            if rg(*a) {
                accumulate(grads, *a, g.len(), |gp| add_into(gp, g));
            }
            if rg(*b) {
                accumulate(grads, *b, g.len(), |gp| gp.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                let bv = val(*b).data();
                accumulate(grads, *a, g.len(), |gp| {
                    for i in 0..g.len() {
                        gp[i] += g[i] * bv[i];
                    }
                });
            }
            if rg(*b) {
                let av = val(*a).data();
                accumulate(grads, *b, g.len(), |gp| {
                    for i in 0..g.len() {
                        gp[i] += g[i] * av[i];
                    }
                });
            }
        }
        Op::AddRow(a, b) => {
            let c = val(*b).numel();
            if rg(*a) {
                accumulate(grads, *a, g.len(), |gp| add_into(gp, g));
            }
            if rg(*b) && c > 0 {
                accumulate(grads, *b, c, |gp| {
                    for row in g.chunks(c) {
                        add_into(gp, row);
                    }
                });
            }
        }
        Op::MulRow(a, b) => {
            let c = val(*b).numel();
            if c == 0 {
                return;
            }
            if rg(*a) {
                let bv = val(*b).data();
                accumulate(grads, *a, g.len(), |gp| {
                    for i in 0..g.len() {
                        gp[i] += g[i] * bv[i % c];
                    }
                });
            }
            if rg(*b) {
                let av = val(*a).data();
                accumulate(grads, *b, c, |gp| {
                    for i in 0..g.len() {
                        gp[i % c] += g[i] * av[i];
                    }
                });
            }
        }
        Op::Scale(a, c) => accumulate(grads, *a, g.len(), |gp| {
            gp.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)
        }),
        Op::AddConst(a) => accumulate(grads, *a, g.len(), |gp| add_into(gp, g)),
        Op::ScaleBy(a, s) => {
            let c = val(*s).data()[0];
            if rg(*a) {
                accumulate(grads, *a, g.len(), |gp| gp.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            if rg(*s) {
                let dot: f64 = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                accumulate(grads, *s, 1, |gp| gp[0] += dot);
            }
        }
        Op::AddScalarVar(a, s) => {
            if rg(*a) {
                accumulate(grads, *a, g.len(), |gp| add_into(gp, g));
            }
            if rg(*s) {
                let total: f64 = g.iter().sum();
                accumulate(grads, *s, 1, |gp| gp[0] += total);
            }
        }
        Op::Sum(a) => {
            let n = val(*a).numel();
            accumulate(grads, *a, n, |gp| gp.iter_mut().for_each(|x| *x += g[0]));
        }
        Op::Mean(a) => {
            let n = val(*a).numel();
            if n > 0 {
                let s = g[0] / n as f64;
                accumulate(grads, *a, n, |gp| gp.iter_mut().for_each(|x| *x += s));
            }
        }
        Op::MeanRows(a) => {
            let (r, c) = val(*a).dims2();
            let inv = 1.0 / r as f64;
            accumulate(grads, *a, r * c, |gp| {
                for row in gp.chunks_mut(c) {
                    row.iter_mut().zip(g).for_each(|(x, y)| *x += y * inv);
                }
            });
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = val(p).numel();
                if rg(p) {
                    accumulate(grads, p, n, |gp| add_into(gp, &g[offset..offset + n]));
                }
                offset += n;
            }
        }
        Op::ConcatCols(parts) => {
            let (r, total) = out.dims2();
            let mut col = 0;
            for &p in parts {
                let (_, w) = val(p).dims2();
                if rg(p) {
                    accumulate(grads, p, r * w, |gp| {
                        for i in 0..r {
                            add_into(&mut gp[i * w..(i + 1) * w], &g[i * total + col..i * total + col + w]);
                        }
                    });
                }
                col += w;
            }
        }
        Op::SliceRows(a, start) => {
            let (_, c) = val(*a).dims2();
            let n = val(*a).numel();
            accumulate(grads, *a, n, |gp| add_into(&mut gp[start * c..start * c + g.len()], g));
        }
        Op::SliceCols(a, start) => {
            let (r, c) = val(*a).dims2();
            let (_, w) = out.dims2();
            accumulate(grads, *a, r * c, |gp| {
                for i in 0..r {
                    add_into(&mut gp[i * c + start..i * c + start + w], &g[i * w..(i + 1) * w]);
                }
            });
        }
        Op::GatherRows(a, idx) => {
            let (r, c) = val(*a).dims2();
            accumulate(grads, *a, r * c, |gp| {
                for (k, &i) in idx.iter().enumerate() {
                    add_into(&mut gp[i * c..(i + 1) * c], &g[k * c..(k + 1) * c]);
                }
            });
        }
        Op::Reshape(a) => accumulate(grads, *a, g.len(), |gp| add_into(gp, g)),
        Op::Softmax(a) => {
            let (_, c) = out.dims2();
            let y = out.data();
            accumulate(grads, *a, g.len(), |gp| {
                if c == 0 {
                    return;
                }
                for ((gr, yr), gpr) in g.chunks(c).zip(y.chunks(c)).zip(gp.chunks_mut(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gpr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            let (_, c) = out.dims2();
            let y = out.data();
            accumulate(grads, *a, g.len(), |gp| {
                if c == 0 {
                    return;
                }
                for ((gr, yr), gpr) in g.chunks(c).zip(y.chunks(c)).zip(gp.chunks_mut(c)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..c {
                        gpr[j] += gr[j] - yr[j].exp() * total;
                    }
                }
            });
        }
        Op::LayerNorm(a, eps) => {
            let x = val(*a);
            let (_, c) = x.dims2();
            accumulate(grads, *a, g.len(), |gp| {
                if c == 0 {
                    return;
                }
                let n = c as f64;
                for ((xr, gr), gpr) in x.data().chunks(c).zip(g.chunks(c)).zip(gp.chunks_mut(c)) {
                    let (mu, rstd) = moments(xr, *eps);
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gx: f64 = xr
                        .iter()
                        .zip(gr)
                        .map(|(&xv, &gv)| gv * (xv - mu) * rstd)
                        .sum::<f64>()
                        / n;
                    for j in 0..c {
                        let xhat = (xr[j] - mu) * rstd;
                        gpr[j] += rstd * (gr[j] - mean_g - xhat * mean_gx);
                    }
                }
            });
        }
        Op::Gelu(a) => {
            let x = val(*a).data();
            accumulate(grads, *a, g.len(), |gp| {
                for i in 0..g.len() {
                    let v = x[i];
                    let u = SQRT_2_OVER_PI * (v + GELU_C * v * v * v);
                    let t = u.tanh();
                    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * v * v);
                    gp[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            accumulate(grads, *a, g.len(), |gp| {
                for i in 0..g.len() {
                    gp[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            });
        }
        Op::Tanh(a) => {
            let y = out.data();
            accumulate(grads, *a, g.len(), |gp| {
                for i in 0..g.len() {
                    gp[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            });
        }
        Op::Log(a) => {
            let x = val(*a).data();
            accumulate(grads, *a, g.len(), |gp| {
                for i in 0..g.len() {
                    gp[i] += g[i] / x[i];
                }
            });
        }
        Op::LogSigmoid(a) => {
            let x = val(*a).data();
            accumulate(grads, *a, g.len(), |gp| {
                for i in 0..g.len() {
                    gp[i] += g[i] * sigmoid(-x[i]);
                }
            });
        }
        Op::Grl(a, lambda) => accumulate(grads, *a, g.len(), |gp| {
            gp.iter_mut().zip(g).for_each(|(x, y)| *x -= lambda * y)
        }),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Result of [`Var::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no path reached it.
    pub fn get(&self, v: &Var) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled when no path reached it.
    pub fn wrt(&self, v: &Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; v.with_value(|t| t.numel())],
        }
    }
}
