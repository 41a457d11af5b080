//! A small reverse-mode automatic differentiation engine over dense,
//! row-major `f64` matrices, with exactly the operators the autoencoder and
//! the regression network need, plus Adam and a checkpoint format.
//!
//! A forward pass appends nodes to a [`Tape`]; node ids are handed out in
//! creation order, so the tape is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Subgradient conventions: `relu'(0) = 0`; in max reductions, ties send the
//! whole gradient to the lowest row index.

mod checkpoint;
mod dense;
mod gradcheck;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry, TensorRole};
pub use dense::Dense;
pub use gradcheck::{check_gradients, GradCheckReport};
pub use params::{adam_step, AdamConfig, Param, ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics;

/// Dense row-major tensor. All tensors the engine manipulates are rank 2;
/// scalars are `1 x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
            requires_grad: false,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
            requires_grad: false,
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    fn is_finite(&self) -> bool {
        // `v * 0.0` is NaN exactly for infinite or NaN `v`; the sum vectorizes.
        self.data.iter().map(|v| v * 0.0).sum::<f64>() == 0.0
    }

    fn rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got shape {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// `c = a * b (+ c if accumulate)` for strided operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 1 {
        // Outer product; dgemm packing dominates at this shape.
        for i in 0..m {
            let ai = a[i * rsa as usize];
            let row = &mut c[i * n..(i + 1) * n];
            for (j, cv) in row.iter_mut().enumerate() {
                let v = ai * b[j * csb as usize];
                *cv = if accumulate { *cv + v } else { v };
            }
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every operand is a live slice; the strides describe the
    // row-major (or transposed row-major) layout of exactly those slices, and
    // `c` is exclusively borrowed with room for `m * n` values.
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

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    /// Fused `x W + b`, optionally followed by ReLU.
    Linear { x: Var, w: Var, b: Var, relu: bool },
    AddBroadcast(Var, Var),
    Relu(Var),
    Concat(Var, Var),
    /// `argmax[i * cols + c]` is the input row chosen for output `(i, c)`.
    ReduceMaxRows { input: Var, argmax: Vec<usize> },
    GlobalMaxPool { input: Var, argmax: Vec<usize> },
    Mse { pred: Var, target: Var },
    Sum(Var),
    /// Custom node whose local gradient was computed during the forward pass.
    PointLoss { input: Var, grad: Vec<f64>, assignment: u64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients from one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, op_name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFiniteValue { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].value.requires_grad)
    }

    /// Leaf node; differentiable iff `value.requires_grad()`.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf { param: None }, "leaf")
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value.with_requires_grad(false))
    }

    /// Binds a stored parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let value = store.param(id).value().clone().with_requires_grad(true);
        self.push(value, Op::Leaf { param: Some(id) }, "param")
    }

    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        self.param(store, id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).rank2("matmul")?;
        let (k2, n) = self.value(b).rank2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} times {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let value = Tensor::matrix(m, n, out)?.with_requires_grad(self.requires(&[a, b]));
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    /// `x W + b` with `b` a `1 x c` row, optionally through ReLU, as one node.
    pub fn linear(&mut self, x: Var, w: Var, b: Var, relu: bool) -> Result<Var> {
        let (m, k) = self.value(x).rank2("linear")?;
        let (k2, n) = self.value(w).rank2("linear")?;
        let (r, n2) = self.value(b).rank2("linear")?;
        if k != k2 || r != 1 || n != n2 {
            return Err(Error::shape("linear", format!("{m}x{k} times {k2}x{n} plus {r}x{n2}")));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(
            m,
            k,
            n,
            self.value(x).data(),
            (k as isize, 1),
            self.value(w).data(),
            (n as isize, 1),
            &mut out,
            true,
        );
        if relu {
            for v in &mut out {
                *v = v.max(0.0);
            }
        }
        let value = Tensor::matrix(m, n, out)?.with_requires_grad(self.requires(&[x, w, b]));
        self.push(value, Op::Linear { x, w, b, relu }, "linear")
    }

    /// Adds a `1 x c` row to every row of an `n x c` matrix.
    pub fn add_broadcast(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, c) = self.value(a).rank2("add_broadcast")?;
        let (r, c2) = self.value(row).rank2("add_broadcast")?;
        if r != 1 || c != c2 {
            return Err(Error::shape("add_broadcast", format!("{n}x{c} plus {r}x{c2}")));
        }
        let b = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_exact_mut(c) {
            for (o, &bv) in chunk.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let value = Tensor::matrix(n, c, out)?.with_requires_grad(self.requires(&[a, row]));
        self.push(value, Op::AddBroadcast(a, row), "add_broadcast")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?.with_requires_grad(src.requires_grad());
        self.push(value, Op::Relu(a), "relu")
    }

    pub fn concat_lastdim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca) = self.value(a).rank2("concat_lastdim")?;
        let (n2, cb) = self.value(b).rank2("concat_lastdim")?;
        if n != n2 {
            return Err(Error::shape("concat_lastdim", format!("{n} rows vs {n2} rows")));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            out.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::matrix(n, ca + cb, out)?.with_requires_grad(self.requires(&[a, b]));
        self.push(value, Op::Concat(a, b), "concat_lastdim")
    }

    /// Output row `i` is the elementwise max over input rows `groups[i]`.
    pub fn reduce_max_rows(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (n, c) = self.value(a).rank2("reduce_max_rows")?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(groups.len() * c);
        let mut argmax = Vec::with_capacity(groups.len() * c);
        for group in groups {
            if group.is_empty() {
                return Err(Error::shape("reduce_max_rows", "empty group"));
            }
            if let Some(&bad) = group.iter().find(|&&r| r >= n) {
                return Err(Error::shape("reduce_max_rows", format!("row {bad} of {n}")));
            }
            for col in 0..c {
                let mut best = group[0];
                for &r in &group[1..] {
                    let (v, bv) = (src[r * c + col], src[best * c + col]);
                    if v > bv || (v == bv && r < best) {
                        best = r;
                    }
                }
                out.push(src[best * c + col]);
                argmax.push(best);
            }
        }
        let value = Tensor::matrix(groups.len(), c, out)?.with_requires_grad(self.requires(&[a]));
        self.push(value, Op::ReduceMaxRows { input: a, argmax }, "reduce_max_rows")
    }

    /// Columnwise max over all rows: `n x c -> 1 x c`.
    pub fn global_max_pool(&mut self, a: Var) -> Result<Var> {
        let (n, c) = self.value(a).rank2("global_max_pool")?;
        if n == 0 {
            return Err(Error::shape("global_max_pool", "no rows"));
        }
        let src = self.value(a).data();
        let mut argmax = vec![0usize; c];
        let mut out = src[..c].to_vec();
        for r in 1..n {
            let row = &src[r * c..(r + 1) * c];
            for col in 0..c {
                // Strict comparison keeps the lowest row on ties.
                if row[col] > out[col] {
                    out[col] = row[col];
                    argmax[col] = r;
                }
            }
        }
        let value = Tensor::matrix(1, c, out)?.with_requires_grad(self.requires(&[a]));
        self.push(value, Op::GlobalMaxPool { input: a, argmax }, "global_max_pool")
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let n = p.len() as f64;
        let sum: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(sum / n).with_requires_grad(self.requires(&[pred, target]));
        self.push(value, Op::Mse { pred, target }, "mse")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let value = Tensor::scalar(src.data().iter().sum()).with_requires_grad(src.requires_grad());
        self.push(value, Op::Sum(a), "sum")
    }

    /// Modified Chamfer distance between an `M x 3` reconstruction and a
    /// fixed target cloud. `k = 1` gives the plain Chamfer distance.
    pub fn mcd_loss(&mut self, recon: Var, target: &PointCloud, k: usize) -> Result<Var> {
        let (_, c) = self.value(recon).rank2("mcd_loss")?;
        if c != 3 {
            return Err(Error::shape("mcd_loss", format!("reconstruction has {c} columns")));
        }
        let out = PointCloud::from_flat(self.value(recon).data())?;
        let (report, grad, assignment) = metrics::mcd_with_assignment(target, &out, k)?;
        let grad = grad.into_iter().flatten().collect();
        let value = Tensor::scalar(report.value).with_requires_grad(self.requires(&[recon]));
        let op = Op::PointLoss {
            input: recon,
            grad,
            assignment,
        };
        self.push(value, op, "mcd_loss")
    }

    /// Hash of every discrete choice made in the forward pass (max-pool
    /// winners, ReLU activity, point-loss neighbour assignments). Equal signatures at two inputs mean both lie
    /// in the same piecewise-smooth region.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::ReduceMaxRows { argmax, .. } | Op::GlobalMaxPool { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                Op::PointLoss { assignment, .. } => {
                    i.hash(&mut h);
                    assignment.hash(&mut h);
                }
                Op::Relu(_) | Op::Linear { relu: true, .. } => {
                    i.hash(&mut h);
                    for v in node.value.data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0].value;
        if !root.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                root.shape()
            )));
        }
        if !root.requires_grad() {
            return Err(Error::Backward(
                "loss is not connected to any differentiable leaf".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                    let n = self.value(*b).cols();
                    if self.value(*a).requires_grad() {
                        // dA = G * B^T
                        let dst = slot(&mut grads, *a, m * k);
                        gemm(m, n, k, &g, (n as isize, 1), self.value(*b).data(), (1, n as isize), dst, true);
                    }
                    if self.value(*b).requires_grad() {
                        // dB = A^T * G
                        let dst = slot(&mut grads, *b, k * n);
                        gemm(k, m, n, self.value(*a).data(), (1, k as isize), &g, (n as isize, 1), dst, true);
                    }
                }
                Op::Linear { x, w, b, relu } => {
                    let (m, k) = (self.value(*x).rows(), self.value(*x).cols());
                    let n = self.value(*w).cols();
                    let mut g = g;
                    if *relu {
                        for (gv, &y) in g.iter_mut().zip(node.value.data()) {
                            if y <= 0.0 {
                                *gv = 0.0;
                            }
                        }
                    }
                    if self.value(*b).requires_grad() {
                        let dst = slot(&mut grads, *b, n);
                        for chunk in g.chunks_exact(n) {
                            add_into(dst, chunk);
                        }
                    }
                    if self.value(*w).requires_grad() {
                        let dst = slot(&mut grads, *w, k * n);
                        gemm(k, m, n, self.value(*x).data(), (1, k as isize), &g, (n as isize, 1), dst, true);
                    }
                    if self.value(*x).requires_grad() {
                        let dst = slot(&mut grads, *x, m * k);
                        gemm(m, n, k, &g, (n as isize, 1), self.value(*w).data(), (1, n as isize), dst, true);
                    }
                }
                Op::AddBroadcast(a, row) => {
                    let c = self.value(*row).cols();
                    if self.value(*row).requires_grad() {
                        let dst = slot(&mut grads, *row, c);
                        for chunk in g.chunks_exact(c) {
                            for (d, &v) in dst.iter_mut().zip(chunk) {
                                *d += v;
                            }
                        }
                    }
                    if self.value(*a).requires_grad() {
                        add_into(slot(&mut grads, *a, g.len()), &g);
                    }
                }
                Op::Relu(a) => {
                    if self.value(*a).requires_grad() {
                        let x = self.value(*a).data();
                        let dst = slot(&mut grads, *a, g.len());
                        for ((d, &gv), &xv) in dst.iter_mut().zip(&g).zip(x) {
                            if xv > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let n = node.value.rows();
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    if self.value(*a).requires_grad() {
                        let dst = slot(&mut grads, *a, n * ca);
                        for i in 0..n {
                            add_into(&mut dst[i * ca..(i + 1) * ca], &g[i * (ca + cb)..i * (ca + cb) + ca]);
                        }
                    }
                    if self.value(*b).requires_grad() {
                        let dst = slot(&mut grads, *b, n * cb);
                        for i in 0..n {
                            add_into(&mut dst[i * cb..(i + 1) * cb], &g[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
                        }
                    }
                }
                Op::ReduceMaxRows { input, argmax } => {
                    if self.value(*input).requires_grad() {
                        let c = node.value.cols();
                        let dst = slot(&mut grads, *input, self.value(*input).len());
                        for (i, (&gv, &r)) in g.iter().zip(argmax).enumerate() {
                            dst[r * c + i % c] += gv;
                        }
                    }
                }
                Op::GlobalMaxPool { input, argmax } => {
                    if self.value(*input).requires_grad() {
                        let c = node.value.cols();
                        let dst = slot(&mut grads, *input, self.value(*input).len());
                        for (col, (&gv, &r)) in g.iter().zip(argmax).enumerate() {
                            dst[r * c + col] += gv;
                        }
                    }
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let scale = 2.0 * g[0] / p.len() as f64;
                    if p.requires_grad() {
                        let dst = slot(&mut grads, *pred, p.len());
                        for ((d, &a), &b) in dst.iter_mut().zip(p.data()).zip(t.data()) {
                            *d += scale * (a - b);
                        }
                    }
                    if t.requires_grad() {
                        let dst = slot(&mut grads, *target, t.len());
                        for ((d, &a), &b) in dst.iter_mut().zip(p.data()).zip(t.data()) {
                            *d -= scale * (a - b);
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.value(*a).requires_grad() {
                        for d in slot(&mut grads, *a, self.value(*a).len()) {
                            *d += g[0];
                        }
                    }
                }
                Op::PointLoss { input, grad, .. } => {
                    if self.value(*input).requires_grad() {
                        let dst = slot(&mut grads, *input, grad.len());
                        for (d, &lg) in dst.iter_mut().zip(grad) {
                            *d += g[0] * lg;
                        }
                    }
                }
            }
            // Interior gradients are not kept once propagated.
        }
        Ok(Gradients { grads })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
