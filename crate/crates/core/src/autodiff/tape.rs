//! Define-by-run reverse-mode tape.
//!
//! Every primitive evaluates eagerly and appends a node. `backward` walks the
//! nodes in reverse recording order, which is a reverse topological order
//! because inputs are always recorded before the nodes that consume them.
//! Nodes that depend on no tracked leaf are never visited.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum MatMulKind {
    /// [m,k] x [k,n]
    MatMat { m: usize, k: usize, n: usize },
    /// [m,k] x [k]
    MatVec { m: usize, k: usize },
    /// [k] x [k,n]
    VecMat { k: usize, n: usize },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var, MatMulKind),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    RSub(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    LogSigmoid(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    StackRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather { table: Var, index: usize },
    LayerNorm { src: Var, eps: f64 },
    SoftCrossEntropy { logits: Var, targets: Vec<f64>, probs: Vec<f64> },
    GradReverse(Var, f64),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    tracked: bool,
}

/// Ordered record of primitive operations.
///
/// A tape is single-use for differentiation: after [`Tape::backward`] ran,
/// further backward calls fail with [`Error::BackwardTwice`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Adjoints produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.adjoints.get(v.0).and_then(|a| a.as_deref())
    }

    /// Adjoint of `v`, or zeros of length `len` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; len],
        }
    }
}

fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow for large `|x|`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    let log_z = max + total.ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - log_z;
    }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("non-empty shape")
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes hold valid tensors")
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Leaf whose adjoint is computed by `backward`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        let shape = vec![data.len()];
        self.push(shape, data, Op::Leaf, false)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (av, bv) = (self.value(a), self.value(b));
        let (kind, shape, out) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => {
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let x = av[i * k + p];
                        let brow = &bv[p * n..(p + 1) * n];
                        for (o, &y) in orow.iter_mut().zip(brow) {
                            *o += x * y;
                        }
                    }
                }
                (MatMulKind::MatMat { m, k, n }, vec![m, n], out)
            }
            (2, 1) if sa[1] == sb[0] => {
                let (m, k) = (sa[0], sa[1]);
                let out = (0..m)
                    .map(|i| {
                        av[i * k..(i + 1) * k]
                            .iter()
                            .zip(bv)
                            .map(|(x, y)| x * y)
                            .sum()
                    })
                    .collect();
                (MatMulKind::MatVec { m, k }, vec![m], out)
            }
            (1, 2) if sa[0] == sb[0] => {
                let (k, n) = (sb[0], sb[1]);
                let mut out = vec![0.0; n];
                for p in 0..k {
                    let x = av[p];
                    let brow = &bv[p * n..(p + 1) * n];
                    for (o, &y) in out.iter_mut().zip(brow) {
                        *o += x * y;
                    }
                }
                (MatMulKind::VecMat { k, n }, vec![n], out)
            }
            _ => return shape_err("matmul", &sa, &sb),
        };
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(shape, out, Op::MatMul(a, b, kind), tracked))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, self.shape(a), self.shape(b));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked_any(&[a, b]);
        self.push(shape, out, op, tracked)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked_any(&[a]);
        self.push(shape, out, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    /// `shift - x`, used for gate complements such as `1 - z`.
    pub fn rsub_scalar(&mut self, a: Var, shift: f64) -> Var {
        self.map(a, |x| shift - x, Op::RSub(a))
    }

    fn row_broadcast(&self, op: &'static str, m: Var, r: Var) -> Result<usize> {
        let (sm, sr) = (self.shape(m), self.shape(r));
        if sm.len() != 2 || sr.len() != 1 || sm[1] != sr[0] {
            return shape_err(op, sm, sr);
        }
        Ok(sm[1])
    }

    /// Adds vector `r` to every row of matrix `m`.
    pub fn add_row(&mut self, m: Var, r: Var) -> Result<Var> {
        let c = self.row_broadcast("add_row", m, r)?;
        let rv = self.value(r);
        let out: Vec<f64> = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rv[i % c])
            .collect();
        let shape = self.shape(m).to_vec();
        let tracked = self.tracked_any(&[m, r]);
        Ok(self.push(shape, out, Op::AddRow(m, r), tracked))
    }

    /// Multiplies every row of matrix `m` elementwise by vector `r`.
    pub fn mul_row(&mut self, m: Var, r: Var) -> Result<Var> {
        let c = self.row_broadcast("mul_row", m, r)?;
        let rv = self.value(r);
        let out: Vec<f64> = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * rv[i % c])
            .collect();
        let shape = self.shape(m).to_vec();
        let tracked = self.tracked_any(&[m, r]);
        Ok(self.push(shape, out, Op::MulRow(m, r), tracked))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        Ok(self.map(a, f64::ln, Op::Log(a)))
    }

    /// `ln(sigmoid(x))`, elementwise.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, log_sigmoid, Op::LogSigmoid(a))
    }

    /// Concatenates 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat", &[], &[]);
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return shape_err("concat", self.shape(p), &[]);
            }
            out.extend_from_slice(self.value(p));
        }
        let tracked = self.tracked_any(parts);
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Concat(parts.to_vec()), tracked))
    }

    /// Contiguous range `[start, start+len)` of a flattened tensor, as 1-D.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(a).len();
        if len == 0 || start + len > n {
            return shape_err("slice", self.shape(a), &[start, len]);
        }
        let out = self.value(a)[start..start + len].to_vec();
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(vec![len], out, Op::Slice { src: a, start }, tracked))
    }

    /// Row `i` of a matrix as a 1-D tensor.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let s = self.shape(m).to_vec();
        if s.len() != 2 || i >= s[0] {
            return shape_err("row", &s, &[i]);
        }
        self.slice(m, i * s[1], s[1])
    }

    /// Stacks equal-length 1-D tensors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return shape_err("stack_rows", &[], &[]);
        };
        let width = self.shape(first).to_vec();
        if width.len() != 1 {
            return shape_err("stack_rows", &width, &[]);
        }
        let mut out = Vec::with_capacity(rows.len() * width[0]);
        for &r in rows {
            if self.shape(r) != width.as_slice() {
                return shape_err("stack_rows", &width, self.shape(r));
            }
            out.extend_from_slice(self.value(r));
        }
        let tracked = self.tracked_any(rows);
        Ok(self.push(
            vec![rows.len(), width[0]],
            out,
            Op::StackRows(rows.to_vec()),
            tracked,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        let tracked = self.tracked_any(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let tracked = self.tracked_any(&[a]);
        self.push(vec![1], vec![m], Op::Mean(a), tracked)
    }

    fn rowwise(&mut self, a: Var, f: fn(&[f64], &mut [f64]), op: Op) -> Var {
        let shape = self.shape(a).to_vec();
        let c = last_dim(&shape);
        let mut out = vec![0.0; self.value(a).len()];
        for (src, dst) in self.value(a).chunks(c).zip(out.chunks_mut(c)) {
            f(src, dst);
        }
        let tracked = self.tracked_any(&[a]);
        self.push(shape, out, op, tracked)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, softmax_row, Op::Softmax(a))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, log_softmax_row, Op::LogSoftmax(a))
    }

    /// Row `index` of an embedding table.
    pub fn gather(&mut self, table: Var, index: usize) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return shape_err("gather", &s, &[index]);
        }
        if index >= s[0] {
            return Err(Error::Contract(format!(
                "embedding index {index} outside vocabulary of size {}",
                s[0]
            )));
        }
        let out = self.value(table)[index * s[1]..(index + 1) * s[1]].to_vec();
        let tracked = self.tracked_any(&[table]);
        Ok(self.push(vec![s[1]], out, Op::Gather { table, index }, tracked))
    }

    /// `(x - mean) / sqrt(var + eps)` over the last axis (no gain or bias).
    pub fn normalize(&mut self, a: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = last_dim(&shape);
        if d < 2 {
            return Err(Error::Contract(format!(
                "layer norm needs width >= 2, got {d}"
            )));
        }
        let mut out = vec![0.0; self.value(a).len()];
        for (src, dst) in self.value(a).chunks(d).zip(out.chunks_mut(d)) {
            let (mean, inv_std) = moments(src, eps);
            for (o, &x) in dst.iter_mut().zip(src) {
                *o = (x - mean) * inv_std;
            }
        }
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(shape, out, Op::LayerNorm { src: a, eps }, tracked))
    }

    /// Fused `-sum_rows sum_u target[u] * log_softmax(logits)[u]`.
    ///
    /// `targets` has the same shape as `logits` and is treated as a constant.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if targets.shape() != shape.as_slice() {
            return shape_err("soft_cross_entropy", &shape, targets.shape());
        }
        let c = last_dim(&shape);
        let lv = self.value(logits);
        let mut probs = vec![0.0; lv.len()];
        let mut logp = vec![0.0; c];
        let mut total = 0.0;
        for ((row, p), t) in lv
            .chunks(c)
            .zip(probs.chunks_mut(c))
            .zip(targets.data().chunks(c))
        {
            log_softmax_row(row, &mut logp);
            let mut step = 0.0;
            for u in 0..c {
                step += t[u] * logp[u];
                p[u] = logp[u].exp();
            }
            total += step;
        }
        let tracked = self.tracked_any(&[logits]);
        Ok(self.push(
            vec![1],
            vec![-total],
            Op::SoftCrossEntropy {
                logits,
                targets: targets.data().to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Identity forward; backward multiplies the incoming adjoint by `-scale`.
    pub fn grad_reverse(&mut self, a: Var, scale: f64) -> Var {
        self.map(a, |x| x, Op::GradReverse(a, scale))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        if self.node(loss).value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        self.consumed = true;
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        // Adjoints only flow into tracked inputs.
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if n.tracked {
                accumulate(&mut adj[v.0], n.value.len(), |b| f(b));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b, kind) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                match *kind {
                    MatMulKind::MatMat { m, k, n } => {
                        send(*a, &mut |da| {
                            for i in 0..m {
                                for p in 0..k {
                                    let mut s = 0.0;
                                    for j in 0..n {
                                        s += g[i * n + j] * bv[p * n + j];
                                    }
                                    da[i * k + p] += s;
                                }
                            }
                        });
                        send(*b, &mut |db| {
                            for i in 0..m {
                                for p in 0..k {
                                    let x = av[i * k + p];
                                    for j in 0..n {
                                        db[p * n + j] += x * g[i * n + j];
                                    }
                                }
                            }
                        });
                    }
                    MatMulKind::MatVec { m, k } => {
                        send(*a, &mut |da| {
                            for i in 0..m {
                                for p in 0..k {
                                    da[i * k + p] += g[i] * bv[p];
                                }
                            }
                        });
                        send(*b, &mut |db| {
                            for i in 0..m {
                                for p in 0..k {
                                    db[p] += av[i * k + p] * g[i];
                                }
                            }
                        });
                    }
                    MatMulKind::VecMat { k, n } => {
                        send(*a, &mut |da| {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += bv[p * n + j] * g[j];
                                }
                                da[p] += s;
                            }
                        });
                        send(*b, &mut |db| {
                            for p in 0..k {
                                for j in 0..n {
                                    db[p * n + j] += av[p] * g[j];
                                }
                            }
                        });
                    }
                }
            }
            Op::Add(a, b) => {
                send(*a, &mut |d| add_into(d, g));
                send(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                send(*a, &mut |d| add_into(d, g));
                send(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * bv[j];
                    }
                });
                send(*b, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * av[j];
                    }
                });
            }
            Op::Scale(a, c) => {
                send(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            Op::RSub(a) => {
                send(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::AddRow(m, r) => {
                send(*m, &mut |d| add_into(d, g));
                send(*r, &mut |d| {
                    let c = d.len();
                    for (j, &y) in g.iter().enumerate() {
                        d[j % c] += y;
                    }
                });
            }
            Op::MulRow(m, r) => {
                let (mv, rv) = (self.value(*m), self.value(*r));
                let c = rv.len();
                send(*m, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * rv[j % c];
                    }
                });
                send(*r, &mut |d| {
                    for (j, &y) in g.iter().enumerate() {
                        d[j % c] += y * mv[j];
                    }
                });
            }
            Op::Tanh(a) => send(*a, &mut |d| {
                for j in 0..d.len() {
                    d[j] += g[j] * (1.0 - out[j] * out[j]);
                }
            }),
            Op::Sigmoid(a) => send(*a, &mut |d| {
                for j in 0..d.len() {
                    d[j] += g[j] * out[j] * (1.0 - out[j]);
                }
            }),
            Op::Exp(a) => send(*a, &mut |d| {
                for j in 0..d.len() {
                    d[j] += g[j] * out[j];
                }
            }),
            Op::Log(a) => {
                let av = self.value(*a);
                send(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] / av[j];
                    }
                })
            }
            Op::LogSigmoid(a) => {
                let av = self.value(*a);
                send(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * sigmoid(-av[j]);
                    }
                })
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    send(p, &mut |d| add_into(d, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Slice { src, start } => {
                let start = *start;
                send(*src, &mut |d| add_into(&mut d[start..start + g.len()], g));
            }
            Op::StackRows(rows) => {
                let mut off = 0;
                for &r in rows {
                    let n = self.value(r).len();
                    send(r, &mut |d| add_into(d, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Sum(a) => send(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => send(*a, &mut |d| {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|x| *x += s);
            }),
            Op::Softmax(a) => {
                let c = last_dim(&node.shape);
                send(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let c = last_dim(&node.shape);
                send(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            dr[j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                })
            }
            Op::Gather { table, index } => {
                let w = g.len();
                let index = *index;
                send(*table, &mut |d| add_into(&mut d[index * w..(index + 1) * w], g));
            }
            Op::LayerNorm { src, eps } => {
                let c = last_dim(&node.shape);
                let xv = self.value(*src);
                send(*src, &mut |d| {
                    for ((dr, gr), (xr, yr)) in d
                        .chunks_mut(c)
                        .zip(g.chunks(c))
                        .zip(xv.chunks(c).zip(out.chunks(c)))
                    {
                        let (_, inv_std) = moments(xr, *eps);
                        let n = c as f64;
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..c {
                            dr[j] += inv_std * (gr[j] - g_mean - yr[j] * gy_mean);
                        }
                    }
                })
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = last_dim(self.shape(*logits));
                send(*logits, &mut |d| {
                    for ((dr, tr), pr) in d
                        .chunks_mut(c)
                        .zip(targets.chunks(c))
                        .zip(probs.chunks(c))
                    {
                        let mass: f64 = tr.iter().sum();
                        for j in 0..c {
                            dr[j] += g[0] * (mass * pr[j] - tr[j]);
                        }
                    }
                })
            }
            Op::GradReverse(a, c) => {
                send(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y * -c));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
}

/// Mean and `1/sqrt(var + eps)` of a row (population variance).
pub(crate) fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}
