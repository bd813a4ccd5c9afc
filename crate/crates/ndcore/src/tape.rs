//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse creation order,
//! which is a valid reverse topological order because a node can only refer
//! to nodes created before it. The graph is rebuilt for every step.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var, f64),
    Transpose(Var),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    SumAll(Var),
    SoftmaxRows(Var),
    MaxOverRows(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    GatherSumRows(Var, Vec<Vec<usize>>),
    Pick(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Affine(..) => "affine",
            Op::MulConst(..) => "mul_const",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Log(..) => "log",
            Op::Transpose(_) => "transpose",
            Op::HCat(_) => "hcat",
            Op::VCat(_) => "vcat",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SumAll(_) => "sum",
            Op::SoftmaxRows(_) => "softmax",
            Op::MaxOverRows(..) => "max_over_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::GatherSumRows(..) => "gather_sum_rows",
            Op::Pick(..) => "pick",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Affine(a, _)
            | Op::MulConst(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Log(a, _)
            | Op::Transpose(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::SumAll(a)
            | Op::SoftmaxRows(a)
            | Op::MaxOverRows(a, _)
            | Op::GatherRows(a, _)
            | Op::GatherSumRows(a, _)
            | Op::Pick(a, _) => vec![*a],
            Op::HCat(vs) | Op::VCat(vs) => vs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<String, Tensor>,
    leaves: HashMap<Var, Tensor>,
}

impl Gradients {
    /// Gradient of a named parameter. Every parameter of the store the tape
    /// was built over has an entry; unreached ones are zero.
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Gradient of a non-parameter leaf created with [`Tape::leaf`].
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.params.insert(name.into(), grad);
    }
}

pub struct Tape<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s> Tape<'s> {
    /// A tape without parameters; only leaves and constants are available.
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::with_capacity(1024),
            param_vars: HashMap::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self
                .store
                .expect("parameter node on a tape without a store")
                .value(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v)
            .dims2()
            .expect("tape values are always matrices")
    }

    /// A differentiable input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let value = as_matrix(value);
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input (labels, masks, zero states).
    pub fn constant(&mut self, value: Tensor) -> Var {
        let value = as_matrix(value);
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let store = self
            .store
            .ok_or_else(|| Error::contract("tape has no parameter store"))?;
        if id.index() >= store.len() {
            return Err(Error::contract(format!(
                "parameter id {} outside store of {} parameters",
                id.index(),
                store.len()
            )));
        }
        let requires_grad = store.get(id).is_trainable();
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_vec(m, n, out), Op::MatMul(a, b)))
    }

    fn zip_same(&self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(shape_err(name, da, db));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_vec(da.0, da.1, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    fn check_row(&self, name: &str, a: Var, row: Var) -> Result<(usize, usize)> {
        let (m, n) = self.dims(a);
        let (r, c) = self.dims(row);
        if r != 1 || c != n {
            return Err(shape_err(name, (m, n), (r, c)));
        }
        Ok((m, n))
    }

    /// `a + row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.check_row("add_row", a, row)?;
        let r = self.value(row).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + r[i % n])
            .collect();
        Ok(self.push(Tensor::from_vec(m, n, data), Op::AddRow(a, row)))
    }

    /// `a ⊙ row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.check_row("mul_row", a, row)?;
        let r = self.value(row).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * r[i % n])
            .collect();
        Ok(self.push(Tensor::from_vec(m, n, data), Op::MulRow(a, row)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (m, n) = self.dims(a);
        let data = self.value(a).data().iter().map(|x| scale * x + shift).collect();
        self.push(Tensor::from_vec(m, n, data), Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let (m, n) = self.dims(a);
        if c.numel() != m * n {
            return Err(shape_err("mul_const", (m, n), c.dims2()?));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(c.data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(
            Tensor::from_vec(m, n, data),
            Op::MulConst(a, c.data().to_vec()),
        ))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (m, n) = self.dims(a);
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(Tensor::from_vec(m, n, data), op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, move |x| x.max(floor).ln(), Op::Log(a, floor))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(Tensor::from_vec(n, m, out), Op::Transpose(a))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("hcat of zero tensors"))?;
        let m = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(shape_err("hcat", (m, total), (r, c)));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        Ok(self.push(Tensor::from_vec(m, total, out), Op::HCat(parts.to_vec())))
    }

    /// Row-wise concatenation of matrices with equal column counts.
    pub fn vcat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("vcat of zero tensors"))?;
        let n = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != n {
                return Err(shape_err("vcat", (rows, n), (r, c)));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::from_vec(rows, n, out), Op::VCat(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > m {
            return Err(Error::contract(format!(
                "slice_rows {start}..{} of a {m}x{n} matrix",
                start + len
            )));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::from_vec(len, n, data), Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return Err(Error::contract(format!(
                "slice_cols {start}..{} of a {m}x{n} matrix",
                start + len
            )));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Tensor::from_vec(m, len, out), Op::SliceCols(a, start)))
    }

    /// Sum of all elements as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise softmax. `mask`, when given, has one entry per element and
    /// `false` marks positions that receive probability exactly 0. Every row
    /// needs at least one unmasked position.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::contract(format!(
                    "softmax mask has {} entries for a {m}x{n} input",
                    mask.len()
                )));
            }
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let keep = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            let row = &src[i * n..(i + 1) * n];
            let max = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::contract(format!(
                    "softmax row {i} has no unmasked position"
                )));
            }
            let mut z = 0.0;
            for j in 0..n {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    out[i * n + j] = e;
                    z += e;
                }
            }
            for o in &mut out[i * n..(i + 1) * n] {
                *o /= z;
            }
        }
        Ok(self.push(Tensor::from_vec(m, n, out), Op::SoftmaxRows(a)))
    }

    /// Column maxima `[1 x n]` of an `m x n` matrix.
    pub fn max_over_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut best = vec![0usize; n];
        let mut out = src[..n].to_vec();
        for i in 1..m {
            for j in 0..n {
                if src[i * n + j] > out[j] {
                    out[j] = src[i * n + j];
                    best[j] = i;
                }
            }
        }
        self.push(Tensor::row(out), Op::MaxOverRows(a, best))
    }

    /// Rows `table[ids[t]]` stacked into a `len(ids) x d` matrix.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::contract("gather_rows with no ids"));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::contract(format!(
                    "row id {id} outside table of {v} rows"
                )));
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Tensor::from_vec(ids.len(), d, out),
            Op::GatherRows(table, ids.to_vec()),
        ))
    }

    /// Row `t` of the output is the sum of `table[g]` for `g` in `groups[t]`.
    /// An empty group yields a zero row.
    pub fn gather_sum_rows(&mut self, table: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (v, d) = self.dims(table);
        if groups.is_empty() {
            return Err(Error::contract("gather_sum_rows with no groups"));
        }
        let src = self.value(table).data();
        let mut out = vec![0.0; groups.len() * d];
        for (t, group) in groups.iter().enumerate() {
            for &id in group {
                if id >= v {
                    return Err(Error::contract(format!(
                        "row id {id} outside table of {v} rows"
                    )));
                }
                for (o, x) in out[t * d..(t + 1) * d].iter_mut().zip(&src[id * d..(id + 1) * d]) {
                    *o += x;
                }
            }
        }
        Ok(self.push(
            Tensor::from_vec(groups.len(), d, out),
            Op::GatherSumRows(table, groups.to_vec()),
        ))
    }

    /// Element at flat row-major `index` as a `1 x 1` tensor.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if index >= t.numel() {
            return Err(Error::contract(format!(
                "pick index {index} outside tensor of {} elements",
                t.numel()
            )));
        }
        let x = t.data()[index];
        Ok(self.push(Tensor::scalar(x), Op::Pick(a, index)))
    }

    /// Gradients of a scalar `loss` with respect to every parameter of the
    /// store and every leaf. Parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.check_forward_finite(loss)?;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: HashMap<ParamId, Vec<f64>> = HashMap::new();
        let mut leaf_grads = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric {
                    op: node.op.name(),
                    node: idx,
                });
            }
            match &node.op {
                Op::Leaf => {
                    let (m, n) = self.dims(Var(idx));
                    leaf_grads.insert(Var(idx), Tensor::from_vec(m, n, g));
                }
                Op::Param(id) => {
                    match param_grads.get_mut(id) {
                        Some(acc) => add_into(acc, &g),
                        None => {
                            param_grads.insert(*id, g);
                        }
                    }
                }
                op => self.propagate(Var(idx), op, &g, &mut grads),
            }
        }

        let mut out = Gradients {
            params: BTreeMap::new(),
            leaves: leaf_grads,
        };
        if let Some(store) = self.store {
            for (id, p) in store.iter() {
                let (m, n) = p.value.dims2()?;
                let g = match param_grads.remove(&id) {
                    Some(g) => Tensor::from_vec(m, n, g),
                    None => Tensor::zeros(m, n),
                };
                out.params.insert(p.name.clone(), g);
            }
        }
        Ok(out)
    }

    fn check_forward_finite(&self, loss: Var) -> Result<()> {
        let mut bad = vec![false; loss.0 + 1];
        for idx in 0..=loss.0 {
            if !self.value(Var(idx)).is_valid() {
                bad[idx] = true;
                let op = &self.nodes[idx].op;
                if op.inputs().iter().all(|v| !bad[v.0]) {
                    return Err(Error::Numeric {
                        op: op.name(),
                        node: idx,
                    });
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, out: Var, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = self.value(out).data();
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.needs(*a) {
                    let ga = self.slot(grads, *a);
                    gemm_nt_acc(g, self.value(*b).data(), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = self.slot(grads, *b);
                    gemm_tn_acc(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    add_into(self.slot(grads, *a), g);
                }
                if self.needs(*b) {
                    add_into(self.slot(grads, *b), g);
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    add_into(self.slot(grads, *a), g);
                }
                if self.needs(*b) {
                    for (o, x) in self.slot(grads, *b).iter_mut().zip(g) {
                        *o -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    for ((o, x), w) in self.slot(grads, *a).iter_mut().zip(g).zip(bv) {
                        *o += x * w;
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    for ((o, x), w) in self.slot(grads, *b).iter_mut().zip(g).zip(av) {
                        *o += x * w;
                    }
                }
            }
            Op::AddRow(a, row) => {
                let n = self.dims(*row).1;
                if self.needs(*a) {
                    add_into(self.slot(grads, *a), g);
                }
                if self.needs(*row) {
                    let gr = self.slot(grads, *row);
                    for (i, x) in g.iter().enumerate() {
                        gr[i % n] += x;
                    }
                }
            }
            Op::MulRow(a, row) => {
                let n = self.dims(*row).1;
                if self.needs(*a) {
                    let rv = self.value(*row).data();
                    for (i, (o, x)) in self.slot(grads, *a).iter_mut().zip(g).enumerate() {
                        *o += x * rv[i % n];
                    }
                }
                if self.needs(*row) {
                    let av = self.value(*a).data();
                    let gr = self.slot(grads, *row);
                    for (i, x) in g.iter().enumerate() {
                        gr[i % n] += x * av[i];
                    }
                }
            }
            Op::Affine(a, scale) => {
                for (o, x) in self.slot(grads, *a).iter_mut().zip(g) {
                    *o += scale * x;
                }
            }
            Op::MulConst(a, c) => {
                for ((o, x), w) in self.slot(grads, *a).iter_mut().zip(g).zip(c) {
                    *o += x * w;
                }
            }
            Op::Sigmoid(a) => {
                for ((o, x), s) in self.slot(grads, *a).iter_mut().zip(g).zip(y) {
                    *o += x * s * (1.0 - s);
                }
            }
            Op::Tanh(a) => {
                for ((o, x), t) in self.slot(grads, *a).iter_mut().zip(g).zip(y) {
                    *o += x * (1.0 - t * t);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                for ((o, x), v) in self.slot(grads, *a).iter_mut().zip(g).zip(av) {
                    if *v > 0.0 {
                        *o += x;
                    }
                }
            }
            Op::Log(a, floor) => {
                let av = self.value(*a).data();
                for ((o, x), v) in self.slot(grads, *a).iter_mut().zip(g).zip(av) {
                    if *v > *floor {
                        *o += x / v;
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                let ga = self.slot(grads, *a);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::HCat(parts) => {
                let (m, total) = self.dims(out);
                let mut col = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if self.needs(p) {
                        let gp = self.slot(grads, p);
                        for i in 0..m {
                            add_into(
                                &mut gp[i * c..(i + 1) * c],
                                &g[i * total + col..i * total + col + c],
                            );
                        }
                    }
                    col += c;
                }
            }
            Op::VCat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.needs(p) {
                        add_into(self.slot(grads, p), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = self.dims(*a).1;
                let ga = self.slot(grads, *a);
                add_into(&mut ga[start * n..start * n + g.len()], g);
            }
            Op::SliceCols(a, start) => {
                let n = self.dims(*a).1;
                let (m, len) = self.dims(out);
                let ga = self.slot(grads, *a);
                for i in 0..m {
                    add_into(
                        &mut ga[i * n + start..i * n + start + len],
                        &g[i * len..(i + 1) * len],
                    );
                }
            }
            Op::SumAll(a) => {
                let gs = g[0];
                for o in self.slot(grads, *a).iter_mut() {
                    *o += gs;
                }
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = self.dims(out);
                let ga = self.slot(grads, *a);
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        ga[i * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::MaxOverRows(a, best) => {
                let n = self.dims(*a).1;
                let ga = self.slot(grads, *a);
                for (j, &i) in best.iter().enumerate() {
                    ga[i * n + j] += g[j];
                }
            }
            Op::GatherRows(table, ids) => {
                let d = self.dims(*table).1;
                let gt = self.slot(grads, *table);
                for (t, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * d..(id + 1) * d], &g[t * d..(t + 1) * d]);
                }
            }
            Op::GatherSumRows(table, groups) => {
                let d = self.dims(*table).1;
                let gt = self.slot(grads, *table);
                for (t, group) in groups.iter().enumerate() {
                    for &id in group {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[t * d..(t + 1) * d]);
                    }
                }
            }
            Op::Pick(a, index) => {
                self.slot(grads, *a)[*index] += g[0];
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let n = self.value(v).numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn as_matrix(t: Tensor) -> Tensor {
    match t.shape() {
        [n] => Tensor::from_vec(1, *n, t.into_data()),
        [_, _] => t,
        other => panic!("tape tensors must be rank 1 or 2, got {other:?}"),
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::contract(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.0, a.1, b.0, b.1
    ))
}
