//! Reverse-mode differentiation over a linear recording of matrix operations.
//!
//! Every operation appends one node; nodes only ever reference earlier nodes,
//! so a single reverse sweep visits each node after all of its consumers.

use std::collections::HashMap;

use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into};
use super::{NumericsError, ParamId, ParamStore, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    MulScalar(Var, Var),
    Gelu(Var),
    Abs(Var),
    NormalizeRows(Var, Vec<T>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    L2NormalizeRows(Var, Vec<T>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    MeanRows(Var),
    Sum(Var),
    Gather(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Clone, Copy)]
struct Binding {
    store: u64,
    param: ParamId,
    var: Var,
}

/// Records a forward computation so it can be differentiated.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<(u64, ParamId), Var>,
    bindings: Vec<Binding>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> NumericsError {
    NumericsError::ShapeMismatch(msg)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), bound: HashMap::new(), bindings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that does receive a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    /// Parameters of a frozen store become constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.key(), id);
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let frozen = store.is_frozen();
        let v = self.push(store.get(id).clone(), Op::Leaf, !frozen);
        self.bound.insert(key, v);
        if !frozen {
            self.bindings.push(Binding { store: store.key(), param: id, var: v });
        }
        v
    }

    pub fn check_finite(&self, v: Var, context: &str) -> Result<(), NumericsError> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(NumericsError::NonFiniteValue(context.to_string()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err(format!("matmul_bt {:?} x {:?}ᵀ", x.shape(), y.shape())));
        }
        let (m, k, n) = (x.rows(), x.cols(), y.rows());
        let mut out = Tensor::zeros(m, n);
        matmul_bt_into(x.data(), y.data(), out.data_mut(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulBt(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(format!("{name} {:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same(a, b, "add", |p, q| p + q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same(a, b, "sub", |p, q| p - q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_same(a, b, "mul", |p, q| p * q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn broadcast_row(&mut self, a: Var, row: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, NumericsError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err(format!("{name} {:?} with row {:?}", x.shape(), r.shape())));
        }
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o = f(*o, b);
            }
        }
        Ok(out)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let out = self.broadcast_row(a, row, "add_row", |p, q| p + q)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let out = self.broadcast_row(a, row, "mul_row", |p, q| p * q)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let x = self.value(a);
        let out = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|&v| v * c).collect()).expect("shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Multiplies `a` by the single value held in the `1 × 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        if self.shape(s) != [1, 1] {
            return Err(shape_err(format!("mul_scalar by {:?}", self.shape(s))));
        }
        let k = self.value(s).get(0, 0);
        let x = self.value(a);
        let out = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|&v| v * k).collect())?;
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::MulScalar(a, s), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        Tensor::new(x.rows(), x.cols(), x.data().iter().map(|&v| f(v)).collect()).expect("shape")
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, gelu);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.map(a, T::abs);
        let rg = self.rg(a);
        self.push(out, Op::Abs(a), rg)
    }

    /// Row-wise `(x − μ) / √(σ² + eps)` with the population variance.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = T::of(x.cols() as f64);
        let eps = T::of(eps);
        let mut out = x.clone();
        let mut inv = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / n;
            let is = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv.push(is);
        }
        let rg = self.rg(a);
        self.push(out, Op::NormalizeRows(a, inv), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.iter().fold(T::zero(), |s, &v| s + (v - max).exp()).ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let floor = T::of(1e-12);
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let norm = row.iter().fold(T::zero(), |s, &v| s + v * v).sqrt().max(floor);
            for v in row.iter_mut() {
                *v = *v / norm;
            }
            norms.push(norm);
        }
        let rg = self.rg(a);
        self.push(out, Op::L2NormalizeRows(a, norms), rg)
    }

    /// Stacks along the sequence (row) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = parts.first().map(|&p| self.value(p).cols()).ok_or_else(|| shape_err("concat of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err(format!("concat_rows width {} vs {cols}", t.cols())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Joins along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = parts.first().map(|&p| self.value(p).rows()).ok_or_else(|| shape_err("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols with differing row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(shape_err(format!("slice_cols {start}..{} of width {}", start + len, x.cols())));
        }
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Arithmetic mean over rows, giving `1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(NumericsError::EmptySequence);
        }
        let inv = T::one() / T::of(x.rows() as f64);
        let mut out = vec![T::zero(); x.cols()];
        for r in 0..x.rows() {
            for (o, &v) in out.iter_mut().zip(x.row(r)) {
                *o = *o + v;
            }
        }
        for o in &mut out {
            *o = *o * inv;
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::row_vector(out), Op::MeanRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |s, &v| s + v);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(shape_err(format!("row index {bad} out of {}", t.rows())));
        }
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(indices.len(), t.cols(), data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::Gather(table, indices.to_vec()), rg))
    }

    /// Reverse sweep from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, NumericsError> {
        if self.shape(root) != [1, 1] {
            return Err(NumericsError::NotScalarLoss(self.shape(root)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(root) {
            return Ok(Gradients { grads, store_bindings: self.bindings.clone() });
        }
        grads[root.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, store_bindings: self.bindings.clone() })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut Tensor<T>)| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let shape = self.nodes[v.0].value.shape();
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                acc(*a, &mut |ga| matmul_bt_into(g.data(), y.data(), ga.data_mut(), m, n, k));
                acc(*b, &mut |gb| matmul_at_into(x.data(), g.data(), gb.data_mut(), m, k, n));
            }
            Op::MatMulBt(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.rows());
                acc(*a, &mut |ga| matmul_into(g.data(), y.data(), ga.data_mut(), m, n, k));
                acc(*b, &mut |gb| matmul_at_into(g.data(), x.data(), gb.data_mut(), m, n, k));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g.data()));
                acc(*b, &mut |gb| add_into(gb, g.data()));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g.data()));
                acc(*b, &mut |gb| {
                    for (o, &d) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o = *o - d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, &d), &q) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o = *o + d * q;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &d), &p) in gb.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *o = *o + d * p;
                    }
                });
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |ga| add_into(ga, g.data()));
                acc(*row, &mut |gr| {
                    for r in 0..g.rows() {
                        for (o, &d) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *o = *o + d;
                        }
                    }
                });
            }
            Op::MulRow(a, row) => {
                let (x, w) = (val(*a), val(*row));
                acc(*a, &mut |ga| {
                    for r in 0..g.rows() {
                        for ((o, &d), &q) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(w.data()) {
                            *o = *o + d * q;
                        }
                    }
                });
                acc(*row, &mut |gr| {
                    for r in 0..g.rows() {
                        for ((o, &d), &p) in gr.data_mut().iter_mut().zip(g.row(r)).zip(x.row(r)) {
                            *o = *o + d * p;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |ga| {
                    for (o, &d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o = *o + d * *c;
                    }
                });
            }
            Op::MulScalar(a, s) => {
                let (x, k) = (val(*a), val(*s).get(0, 0));
                acc(*a, &mut |ga| {
                    for (o, &d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o = *o + d * k;
                    }
                });
                acc(*s, &mut |gs| {
                    let dot = g.data().iter().zip(x.data()).fold(T::zero(), |s, (&d, &p)| s + d * p);
                    gs.data_mut()[0] = gs.data_mut()[0] + dot;
                });
            }
            Op::Gelu(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, &d), &p) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *o = *o + d * gelu_grad(p);
                    }
                });
            }
            Op::Abs(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, &d), &p) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        let s = if p > T::zero() {
                            T::one()
                        } else if p < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *o = *o + d * s;
                    }
                });
            }
            Op::NormalizeRows(a, inv) => {
                let y = &node.value;
                let n = T::of(y.cols() as f64);
                acc(*a, &mut |ga| {
                    for r in 0..y.rows() {
                        let (dy, yr) = (g.row(r), y.row(r));
                        let sum_dy = dy.iter().fold(T::zero(), |s, &v| s + v);
                        let sum_dyy = dy.iter().zip(yr).fold(T::zero(), |s, (&d, &p)| s + d * p);
                        let k = inv[r] / n;
                        for ((o, &d), &p) in ga.row_mut(r).iter_mut().zip(dy).zip(yr) {
                            *o = *o + k * (n * d - sum_dy - p * sum_dyy);
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for r in 0..y.rows() {
                        let (dy, yr) = (g.row(r), y.row(r));
                        let dot = dy.iter().zip(yr).fold(T::zero(), |s, (&d, &p)| s + d * p);
                        for ((o, &d), &p) in ga.row_mut(r).iter_mut().zip(dy).zip(yr) {
                            *o = *o + p * (d - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for r in 0..y.rows() {
                        let (dy, yr) = (g.row(r), y.row(r));
                        let sum = dy.iter().fold(T::zero(), |s, &v| s + v);
                        for ((o, &d), &p) in ga.row_mut(r).iter_mut().zip(dy).zip(yr) {
                            *o = *o + d - p.exp() * sum;
                        }
                    }
                });
            }
            Op::L2NormalizeRows(a, norms) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for r in 0..y.rows() {
                        let (dy, yr) = (g.row(r), y.row(r));
                        let dot = dy.iter().zip(yr).fold(T::zero(), |s, (&d, &p)| s + d * p);
                        for ((o, &d), &p) in ga.row_mut(r).iter_mut().zip(dy).zip(yr) {
                            *o = *o + (d - p * dot) / norms[r];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    let chunk = &g.data()[offset * cols..(offset + rows) * cols];
                    acc(p, &mut |gp| add_into(gp, chunk));
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = val(p).cols();
                    acc(p, &mut |gp| {
                        for r in 0..g.rows() {
                            for (o, &d) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + width]) {
                                *o = *o + d;
                            }
                        }
                    });
                    offset += width;
                }
            }
            Op::SliceCols(a, start) => {
                let width = g.cols();
                acc(*a, &mut |ga| {
                    for r in 0..g.rows() {
                        for (o, &d) in ga.row_mut(r)[*start..*start + width].iter_mut().zip(g.row(r)) {
                            *o = *o + d;
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let rows = val(*a).rows();
                let inv = T::one() / T::of(rows as f64);
                acc(*a, &mut |ga| {
                    for r in 0..rows {
                        for (o, &d) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o = *o + d * inv;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let d = g.get(0, 0);
                acc(*a, &mut |ga| {
                    for o in ga.data_mut() {
                        *o = *o + d;
                    }
                });
            }
            Op::Gather(table, indices) => {
                acc(*table, &mut |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, &d) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o = *o + d;
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut Tensor<T>, src: &[T]) {
    for (o, &d) in dst.data_mut().iter_mut().zip(src) {
        *o = *o + d;
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    store_bindings: Vec<Binding>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for every parameter of `store`, zero where the parameter
    /// was not reached from the loss.
    pub fn for_store(&self, store: &ParamStore<T>) -> StoreGrads<T> {
        let mut out: Vec<Tensor<T>> = store
            .ids()
            .map(|id| {
                let [r, c] = store.get(id).shape();
                Tensor::zeros(r, c)
            })
            .collect();
        for b in self.store_bindings.iter().filter(|b| b.store == store.key()) {
            if let Some(g) = self.of(b.var) {
                out[b.param.index()] = g.clone();
            }
        }
        StoreGrads { grads: out }
    }

    /// Number of gradient buffers allocated for parameters of `store`.
    pub fn allocated_for(&self, store: &ParamStore<T>) -> usize {
        self.store_bindings
            .iter()
            .filter(|b| b.store == store.key() && self.of(b.var).is_some())
            .count()
    }
}

/// Per-parameter gradients aligned with a store's [`ParamId`]s.
#[derive(Debug, Clone)]
pub struct StoreGrads<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> StoreGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store
                .ids()
                .map(|id| {
                    let [r, c] = store.get(id).shape();
                    Tensor::zeros(r, c)
                })
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.index()]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += other`, in parameter order.
    pub fn accumulate(&mut self, other: &StoreGrads<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            add_into(a, b.data());
        }
    }

    pub fn scale(&mut self, c: f64) {
        let c = T::of(c);
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = *v * c;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(rows, cols, v).unwrap()
    }

    #[test]
    fn linear_gradient_is_broadcast_input() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", t(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]));
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 2, &[3.0, -2.0]));
        let wv = tape.param(&store, w);
        let y = tape.matmul(x, wv).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap().for_store(&store);
        assert_eq!(grads.get(w).data(), &[3.0, 3.0, 3.0, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn unused_parameter_gets_zero() {
        let mut store = ParamStore::<f64>::new();
        let used = store.add("used", t(1, 1, &[2.0]));
        let unused = store.add("unused", t(1, 2, &[5.0, 6.0]));
        let mut tape = Tape::new();
        let u = tape.param(&store, used);
        let sq = tape.mul(u, u).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap().for_store(&store);
        assert_eq!(grads.get(used).data(), &[4.0]);
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_store_receives_no_gradient() {
        let mut frozen = ParamStore::<f64>::frozen();
        let f = frozen.add("f", t(1, 1, &[2.0]));
        let mut live = ParamStore::<f64>::new();
        let l = live.add("l", t(1, 1, &[3.0]));
        let mut tape = Tape::new();
        let fv = tape.param(&frozen, f);
        let lv = tape.param(&live, l);
        let p = tape.mul(fv, lv).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.allocated_for(&frozen), 0);
        assert_eq!(grads.of(fv), None);
        assert_eq!(grads.for_store(&live).get(l).data(), &[2.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(NumericsError::NotScalarLoss([1, 2]))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(2, 3, &[1.0, 2.0, 3.0, -50.0, 0.0, 50.0]));
        let s = tape.softmax_rows(x);
        for r in 0..2 {
            let row = tape.value(s).row(r);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rows_matches_closed_form() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(1, 3, &[1.0, 2.0, 3.0]));
        let y = tape.normalize_rows(x, 1e-5);
        let expect = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
        let got = tape.value(y).data();
        assert!((got[0] + expect).abs() < 1e-12);
        assert!(got[1].abs() < 1e-12);
        assert!((got[2] - expect).abs() < 1e-12);
        assert!((got[2] - 1.2247).abs() < 1e-4);
    }
}
