//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node in creation order, so the
//! node list is already a topological order of the graph and `backward` is a
//! single reverse sweep. Trainable parameters live outside the tape in a
//! [`ParamStore`]; a backward pass adds its gradients into the store. The
//! caller zeroes gradients explicitly, which is what lets gradient caching
//! accumulate over several sub-batch tapes.

mod gradcheck;

use std::collections::HashMap;

pub use gradcheck::{finite_difference_check, GradCheckReport, ParamCheck};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Row norms below this are rejected by [`Tape::row_l2_normalize`].
pub const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> ParamId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Global L2 norm over the gradients of all trainable parameters.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.as_slice())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute elementwise difference between the gradients of two
    /// stores with the same layout.
    pub fn max_grad_diff(&self, other: &ParamStore) -> f64 {
        assert_eq!(self.len(), other.len(), "parameter stores differ in layout");
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| a.grad.max_abs_diff(&b.grad))
            .fold(0.0, f64::max)
    }

    pub fn max_value_diff(&self, other: &ParamStore) -> f64 {
        assert_eq!(self.len(), other.len(), "parameter stores differ in layout");
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| a.value.max_abs_diff(&b.value))
            .fold(0.0, f64::max)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    SumRows(Var),
    SumAll(Var),
    Transpose(Var),
    Reshape(Var),
    RowL2Normalize(Var, Vec<f64>),
    SoftmaxRows(Var, f64),
    LogSoftmaxRows(Var, f64),
    GatherRows(Var, Vec<usize>),
    SumRowGroups(Var, Vec<Vec<usize>>),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the seeded output with respect to `var`. `None` for nodes
    /// that do not require gradients (constants, frozen inputs).
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    params: HashMap<ParamId, Var>,
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
            grad_enabled: true,
            params: HashMap::new(),
        }
    }

    /// A tape that evaluates values only. Nothing on it requires gradients and
    /// no backward links are kept.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of `f64` values currently held by graph nodes that carry
    /// backward links.
    pub fn live_activations(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.requires_grad)
            .map(|n| n.value.len())
            .sum()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf input that receives a gradient in [`Gradients`].
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Places a stored parameter on the tape. Repeated calls for the same id
    /// return the same node, so each parameter gets one accumulation per pass.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a 1 x cols row vector to every row of `m`.
    pub fn add_row_broadcast(&mut self, m: Var, row: Var) -> Var {
        let (rows, cols) = self.shape(m);
        assert_eq!(self.shape(row), (1, cols), "broadcast row shape mismatch");
        let mut value = self.value(m).clone();
        let bias = self.value(row).as_slice().to_vec();
        for i in 0..rows {
            for (x, b) in value.row_mut(i).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        let rg = self.rg(m) || self.rg(row);
        self.push(value, Op::AddRowBroadcast(m, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    /// Sums each row: n x m -> n x 1.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let sums: Vec<f64> = m.iter_rows().map(|r| r.iter().sum()).collect();
        let value = Matrix::from_vec(m.rows(), 1, sums).expect("row sums");
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Reinterprets the row-major buffer under a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = Matrix::from_vec(rows, cols, self.value(a).as_slice().to_vec())
            .expect("reshape must preserve the element count");
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg)
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let norms = m.row_norms();
        if let Some((row, &norm)) = norms.iter().enumerate().find(|(_, &n)| !(n >= MIN_ROW_NORM)) {
            return Err(Error::ZeroRow { row, norm });
        }
        let mut value = m.clone();
        for (i, &n) in norms.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|x| *x /= n);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::RowL2Normalize(a, norms), rg))
    }

    /// Row-wise softmax of `m / tau`, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var, tau: f64) -> Result<Var> {
        check_tau(tau)?;
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i), tau);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::SoftmaxRows(a, tau), rg))
    }

    /// Row-wise log-softmax of `m / tau`. The log-partition is evaluated as
    /// `max + ln_1p(sum of the remaining exponentials)`, which keeps the
    /// values exact when one logit dominates.
    pub fn log_softmax_rows(&mut self, a: Var, tau: f64) -> Result<Var> {
        check_tau(tau)?;
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            log_softmax_in_place(value.row_mut(i), tau);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSoftmaxRows(a, tau), rg))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let m = self.value(a);
        for &i in indices {
            assert!(
                i < m.rows(),
                "gather index {i} out of range for {} rows",
                m.rows()
            );
        }
        let value = m.select_rows(indices);
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, indices.to_vec()), rg)
    }

    /// Output row `i` is the sum of input rows `groups[i]`, added in order.
    pub fn sum_row_groups(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let m = self.value(a);
        let mut value = Matrix::zeros(groups.len(), m.cols());
        for (i, group) in groups.iter().enumerate() {
            assert!(!group.is_empty(), "empty row group {i}");
            let out = value.row_mut(i);
            out.copy_from_slice(m.row(group[0]));
            for &r in &group[1..] {
                for (o, x) in out.iter_mut().zip(m.row(r)) {
                    *o += x;
                }
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::SumRowGroups(a, groups.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat column mismatch");
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        let value = Matrix::from_vec(rows, cols, data).expect("concat buffer");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Backpropagates from a scalar loss, adding parameter gradients into
    /// `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        self.backward_from(&[(loss, Matrix::scalar(1.0))], store)
    }

    /// Backpropagates caller-supplied output gradients. Used to push cached
    /// embedding gradients through a re-encoded sub-batch.
    pub fn backward_from(&self, seeds: &[(Var, Matrix)], store: &mut ParamStore) -> Result<Gradients> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            let shape = self.shape(*v);
            if g.shape() != shape {
                return Err(Error::dim(shape.0 * shape.1, g.len(), "seed gradient shape"));
            }
            if self.rg(*v) {
                accumulate(&mut grads[v.0], g.clone());
            }
            last = last.max(v.0 + 1);
        }

        for idx in (0..last).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for node_grads in grads.iter().enumerate() {
            if let (idx, Some(g)) = node_grads {
                if let Op::Param(id) = self.nodes[idx].op {
                    store.get_mut(id).grad.add_assign(g);
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut send = |v: Var, grad: Matrix| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], grad);
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    send(*a, g.matmul_transposed(bv));
                }
                if self.rg(*b) {
                    send(*b, av.transpose().matmul(g));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    send(*a, g.zip_map(bv, |x, y| x * y));
                }
                if self.rg(*b) {
                    send(*b, g.zip_map(av, |x, y| x * y));
                }
            }
            Op::AddRowBroadcast(m, row) => {
                send(*m, g.clone());
                if self.rg(*row) {
                    let mut col = Matrix::zeros(1, g.cols());
                    for r in g.iter_rows() {
                        for (c, x) in col.as_mut_slice().iter_mut().zip(r) {
                            *c += x;
                        }
                    }
                    send(*row, col);
                }
            }
            Op::Scale(a, s) => send(*a, g.scale(*s)),
            Op::Exp(a) => send(*a, g.zip_map(&node.value, |x, y| x * y)),
            Op::Log(a) => send(*a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Tanh(a) => send(*a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y))),
            Op::SumRows(a) => {
                let (rows, cols) = self.shape(*a);
                let mut out = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    out.row_mut(i).fill(g[(i, 0)]);
                }
                send(*a, out);
            }
            Op::SumAll(a) => {
                let (rows, cols) = self.shape(*a);
                send(*a, Matrix::filled(rows, cols, g.item()));
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::Reshape(a) => {
                let (rows, cols) = self.shape(*a);
                send(
                    *a,
                    Matrix::from_vec(rows, cols, g.as_slice().to_vec()).expect("reshape grad"),
                );
            }
            Op::RowL2Normalize(a, norms) => {
                let y = &node.value;
                let mut out = Matrix::zeros(y.rows(), y.cols());
                for (i, &n) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let proj = dot(yr, gr);
                    for ((o, &yv), &gv) in out.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = (gv - yv * proj) / n;
                    }
                }
                send(*a, out);
            }
            Op::SoftmaxRows(a, tau) => {
                let s = &node.value;
                let mut out = Matrix::zeros(s.rows(), s.cols());
                for i in 0..s.rows() {
                    let (sr, gr) = (s.row(i), g.row(i));
                    let inner = dot(sr, gr);
                    for ((o, &sv), &gv) in out.row_mut(i).iter_mut().zip(sr).zip(gr) {
                        *o = sv * (gv - inner) / tau;
                    }
                }
                send(*a, out);
            }
            Op::LogSoftmaxRows(a, tau) => {
                let l = &node.value;
                let mut out = Matrix::zeros(l.rows(), l.cols());
                for i in 0..l.rows() {
                    let (lr, gr) = (l.row(i), g.row(i));
                    let gsum: f64 = gr.iter().sum();
                    for ((o, &lv), &gv) in out.row_mut(i).iter_mut().zip(lr).zip(gr) {
                        *o = (gv - lv.exp() * gsum) / tau;
                    }
                }
                send(*a, out);
            }
            Op::GatherRows(a, indices) => {
                let (rows, cols) = self.shape(*a);
                let mut out = Matrix::zeros(rows, cols);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, x) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                send(*a, out);
            }
            Op::SumRowGroups(a, groups) => {
                let (rows, cols) = self.shape(*a);
                let mut out = Matrix::zeros(rows, cols);
                for (k, group) in groups.iter().enumerate() {
                    for &i in group {
                        for (o, x) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                }
                send(*a, out);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.rg(p) {
                        let slice = g.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                        send(p, Matrix::from_vec(rows, cols, slice).expect("concat grad"));
                    }
                    offset += rows;
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(tau))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

fn softmax_in_place(row: &mut [f64], tau: f64) {
    let max = row[argmax(row)] / tau;
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x / tau - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

fn log_softmax_in_place(row: &mut [f64], tau: f64) {
    let top = argmax(row);
    let max = row[top] / tau;
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &x)| (x / tau - max).exp())
        .sum();
    let log_norm = rest.ln_1p();
    for x in row.iter_mut() {
        *x = (*x / tau - max) - log_norm;
    }
}
