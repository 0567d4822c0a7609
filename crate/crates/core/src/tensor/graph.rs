//! Wengert-list reverse mode. A [`Graph`] records every forward op with its
//! result; [`Graph::backward`] replays the list in reverse and returns the
//! gradients of all parameter leaves. One graph per training step.

use std::collections::HashMap;
use std::rc::Rc;

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::{ParamStore, ResizePlan, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sigmoid(Var),
    Ln(Var),
    Exp(Var),
    Square(Var),
    Abs(Var),
    Min(Var, Var),
    Max(Var, Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    AddBias(Var, Var),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    Resize(Var, Rc<ResizePlan>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    params: IndexMap<String, Vec<f64>>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(Vec::as_slice)
    }

    /// Gradient with respect to an arbitrary node, if it was reached.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.params.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        }),
    }
}

/// `c (+)= op(a) * op(b)` with `a` as m×k and `b` as k×n after transposition.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover the strided m×k, k×n and m×n views above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

enum Bcast {
    Same,
    LeftScalar,
    RightScalar,
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if a.numel() == 1 {
        Ok(Bcast::LeftScalar)
    } else if b.numel() == 1 {
        Ok(Bcast::RightScalar)
    } else {
        Err(shape_err(op, a, b))
    }
}

fn zip_map(a: &Tensor, b: &Tensor, mode: &Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (shape, data): (Vec<usize>, Vec<f64>) = match mode {
        Bcast::Same => (
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        ),
        Bcast::LeftScalar => {
            let x = a.item();
            (b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())
        }
        Bcast::RightScalar => {
            let y = b.item();
            (a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())
        }
    };
    Tensor {
        shape,
        data,
        grad: None,
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape().to_vec(),
        data: a.data().iter().map(|&x| f(x)).collect(),
        grad: None,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "constant" });
        }
        let mut t = t;
        t.grad = None;
        Ok(self.push(t, Op::Leaf, false))
    }

    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.constant(Tensor::scalar(v))
    }

    /// Binds a named parameter. Frozen parameters become constants. Binding the
    /// same name twice returns the same node so shared weights sum gradients.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?;
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "param" });
        }
        let mut value = t.clone();
        value.grad = None;
        let trainable = !store.is_frozen(name);
        let v = self.push(value, Op::Leaf, trainable);
        if trainable {
            self.nodes[v.0].param = Some(name.to_string());
        }
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2("matmul", ta)?;
        let (k2, n) = dims2("matmul", tb)?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mode = broadcast(op, ta, tb)?;
        let out = zip_map(ta, tb, &mode, f);
        if !out.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, mk(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, f64::min, Op::Min)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, f64::max, Op::Max)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = map(self.value(a), f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::Offset(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `s - a`, elementwise.
    pub fn rsub(&mut self, s: f64, a: Var) -> Var {
        let n = self.neg(a);
        self.offset(n, s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let v = self.unary(a, f64::ln, Op::Ln(a));
        if !self.value(v).is_finite() {
            return Err(Error::NonFinite { op: "ln" });
        }
        Ok(v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// `[m, n] + [n]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, n) = dims2("add_bias", ta)?;
        if tb.numel() != n {
            return Err(shape_err("add_bias", ta, tb));
        }
        let mut out = ta.clone();
        for row in out.data.chunks_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(x, b)| *x += b);
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    /// `x · w + b` for a `[m, k]` input, `[k, n]` weight and `[n]` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::InvalidArgument("concat: empty input or axis > 1".into()));
        }
        let (r0, c0) = dims2("concat", self.value(parts[0]))?;
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = dims2("concat", self.value(p))?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(shape_err("concat", self.value(parts[0]), self.value(p)));
            }
            rows += r;
            cols += c;
        }
        let out = if axis == 0 {
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(vec![rows, c0], data)?
        } else {
            let mut data = Vec::with_capacity(r0 * cols);
            for r in 0..r0 {
                for &p in parts {
                    let t = self.value(p);
                    let c = t.shape()[1];
                    data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
                }
            }
            Tensor::new(vec![r0, cols], data)?
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2("slice_cols", t)?;
        if start >= end || end > c {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for row in t.data().chunks(c) {
            data.extend_from_slice(&row[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![r, w], data)?, Op::SliceCols(a, start, end), rg))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2("gather_rows", t)?;
        if idx.is_empty() || idx.iter().any(|&i| i >= r) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: t.shape().to_vec(),
                rhs: idx.to_vec(),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let rg = self.rg(a);
        let out = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Bilinear resize of a channels-last `[in_h·in_w, C]` map.
    pub fn resize(&mut self, a: Var, plan: Rc<ResizePlan>) -> Result<Var> {
        let t = self.value(a);
        let (cells, c) = dims2("resize", t)?;
        if cells != plan.in_cells() {
            return Err(Error::Shape {
                op: "resize",
                lhs: t.shape().to_vec(),
                rhs: vec![plan.in_h, plan.in_w],
            });
        }
        let data = plan.forward_hwc(t.data(), c);
        let out = Tensor::new(vec![plan.out_cells(), c], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Resize(a, plan), rg))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let root_t = self.value(root);
        if root_t.numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: root_t.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params = IndexMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(name), Some(g)) = (&node.param, &grads[i]) {
                params.insert(name.clone(), g.clone());
            }
        }
        Ok(Grads {
            params,
            nodes: grads,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        // Reduce a broadcast contribution back onto a scalar operand.
        let fold = |v: Var, contrib: Vec<f64>| -> Vec<f64> {
            if val(v).numel() == 1 && contrib.len() != 1 {
                vec![contrib.iter().sum()]
            } else {
                contrib
            }
        };
        // Values of `v` aligned with the output, broadcasting scalars.
        let aligned = |v: Var, i: usize| {
            let t = val(v);
            if t.numel() == 1 {
                t.data()[0]
            } else {
                t.data()[i]
            }
        };
        let out = &node.value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, val(*b).data(), true, &mut ga, false);
                    send(*a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, val(*a).data(), true, g, false, &mut gb, false);
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                send(*a, fold(*a, g.to_vec()));
                send(*b, fold(*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                send(*a, fold(*a, g.to_vec()));
                send(*b, fold(*b, g.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let ga = (0..g.len()).map(|i| g[i] * aligned(*b, i)).collect();
                let gb = (0..g.len()).map(|i| g[i] * aligned(*a, i)).collect();
                send(*a, fold(*a, ga));
                send(*b, fold(*b, gb));
            }
            Op::Div(a, b) => {
                let ga = (0..g.len()).map(|i| g[i] / aligned(*b, i)).collect();
                let gb = (0..g.len())
                    .map(|i| -g[i] * out.data()[i] / aligned(*b, i))
                    .collect();
                send(*a, fold(*a, ga));
                send(*b, fold(*b, gb));
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let pick_a = |i: usize| out.data()[i] == aligned(*a, i);
                let ga = (0..g.len())
                    .map(|i| if pick_a(i) { g[i] } else { 0.0 })
                    .collect();
                let gb = (0..g.len())
                    .map(|i| if pick_a(i) { 0.0 } else { g[i] })
                    .collect();
                send(*a, fold(*a, ga));
                send(*b, fold(*b, gb));
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|x| x * s).collect()),
            Op::Offset(a) => send(*a, g.to_vec()),
            Op::Relu(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                send(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Ln(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| g / x).collect());
            }
            Op::Exp(a) => {
                let y = out.data();
                send(*a, g.iter().zip(y).map(|(g, y)| g * y).collect());
            }
            Op::Square(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect());
            }
            Op::Abs(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, &x)| g * sign(x)).collect());
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a).data();
                send(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Sum(a) => send(*a, vec![g[0]; val(*a).numel()]),
            Op::Mean(a) => {
                let n = val(*a).numel();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::AddBias(a, b) => {
                send(*a, g.to_vec());
                if self.nodes[b.0].requires_grad {
                    let n = val(*b).numel();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(acc, x)| *acc += x);
                    }
                    send(*b, gb);
                }
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let n = val(p).numel();
                        send(p, g[off..off + n].to_vec());
                        off += n;
                    }
                } else {
                    let total = out.shape()[1];
                    let mut col = 0;
                    for &p in parts {
                        let (r, c) = (val(p).shape()[0], val(p).shape()[1]);
                        let mut gp = Vec::with_capacity(r * c);
                        for row in 0..r {
                            gp.extend_from_slice(&g[row * total + col..row * total + col + c]);
                        }
                        send(p, gp);
                        col += c;
                    }
                }
            }
            Op::SliceCols(a, start, end) => {
                let c = val(*a).shape()[1];
                let w = end - start;
                let mut ga = vec![0.0; val(*a).numel()];
                for (r, row) in g.chunks(w).enumerate() {
                    ga[r * c + start..r * c + end].copy_from_slice(row);
                }
                send(*a, ga);
            }
            Op::GatherRows(a, idx) => {
                let c = val(*a).shape()[1];
                let mut ga = vec![0.0; val(*a).numel()];
                for (k, &i) in idx.iter().enumerate() {
                    ga[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(acc, x)| *acc += x);
                }
                send(*a, ga);
            }
            Op::Resize(a, plan) => {
                let c = val(*a).shape()[1];
                send(*a, plan.backward_hwc(g, c));
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_sigmoid_matmul_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

        let z = g.scalar(0.0).unwrap();
        let s = g.sigmoid(z);
        assert_eq!(g.item(s), 0.5);

        let a = g.constant(Tensor::full(&[2, 3], 1.0)).unwrap();
        let b = g.constant(Tensor::full(&[3, 2], 1.0)).unwrap();
        let m = g.matmul(a, b).unwrap();
        assert_eq!(g.value(m).shape(), &[2, 2]);
        assert_eq!(g.value(m).data(), &[3.0; 4]);
    }

    #[test]
    fn shape_mismatch_reports_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        match g.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let c = g.constant(Tensor::zeros(&[3])).unwrap();
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut g = Graph::new();
        assert!(matches!(
            g.constant(t(&[2], &[1.0, f64::NAN])),
            Err(Error::NonFinite { .. })
        ));
        let mut store = ParamStore::new();
        store.insert("p", t(&[1], &[f64::INFINITY]));
        assert!(g.param(&store, "p").is_err());
    }

    #[test]
    fn scalar_broadcast() {
        let mut g = Graph::new();
        let a = g.constant(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let s = g.scalar(2.0).unwrap();
        let m = g.mul(s, a).unwrap();
        assert_eq!(g.value(m).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn shared_param_accumulates() {
        let mut store = ParamStore::new();
        store.insert("w", t(&[1], &[3.0]));
        let mut g = Graph::new();
        let w1 = g.param(&store, "w").unwrap();
        let w2 = g.param(&store, "w").unwrap();
        assert_eq!(w1, w2);
        let y = g.mul(w1, w2).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.param("w").unwrap(), &[6.0]);
    }

    #[test]
    fn frozen_param_gets_no_grad() {
        let mut store = ParamStore::new();
        store.insert("w", t(&[1], &[3.0]));
        store.insert("f", t(&[1], &[2.0]));
        store.freeze("f").unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let f = g.param(&store, "f").unwrap();
        let y = g.mul(w, f).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.param("w").unwrap(), &[2.0]);
        assert!(grads.param("f").is_none());
        store.accumulate(&grads);
        assert!(store.get("f").unwrap().grad().is_none());
    }
}
