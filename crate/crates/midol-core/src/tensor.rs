//! Minimal dense arrays and a reverse-mode tape.
//!
//! The primitive set is closed: exactly the operations the training losses
//! need, each with a hand-written backward rule that is verified against
//! central finite differences (see [`grad_check`]). Nodes live on a
//! [`Graph`] arena and are referenced by [`NodeId`]; the tape order is the
//! topological order, so backward is a single reverse sweep.
//!
//! Stop-gradient is expressed by inserting a value as a constant leaf
//! ([`Graph::constant`]): no gradient is ever propagated into it.

use crate::error::{Error, Result};
use crate::math;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub const NORM_FLOOR: f64 = 1e-12;

/// A dense row-major array of `f64`, rank 1 or 2 in practice.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::ShapeMismatch(format!("zero extent in {shape:?}")));
        }
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} wants {n} entries, got {}",
                data.len()
            )));
        }
        Ok(DenseArray { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        DenseArray {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        DenseArray {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows of a rank-2 array (a rank-1 array counts as a single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            self.data.len()
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Plain (out-of-graph) matrix product.
    pub fn matmul(&self, other: &DenseArray) -> Result<DenseArray> {
        let (m, k, k2, n) = (self.rows(), self.cols(), other.rows(), other.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.data[p * n + j];
                }
            }
        }
        DenseArray::matrix(m, n, out)
    }

    /// Plain `self * other^T`.
    pub fn matmul_nt(&self, other: &DenseArray) -> Result<DenseArray> {
        let (m, k, n, k2) = (self.rows(), self.cols(), other.rows(), other.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul_nt {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += self.data[i * k + p] * other.data[j * k + p];
                }
                out[i * n + j] = s;
            }
        }
        DenseArray::matrix(m, n, out)
    }

    /// Plain row-broadcast add: `other` may equal `self`'s shape or be a
    /// single row.
    pub fn add(&self, other: &DenseArray) -> Result<DenseArray> {
        let mut out = self.clone();
        if other.data.len() == self.data.len() {
            for (o, v) in out.data.iter_mut().zip(&other.data) {
                *o += v;
            }
        } else if other.rows() == 1 && other.cols() == self.cols() {
            let c = self.cols();
            for r in 0..self.rows() {
                for j in 0..c {
                    out.data[r * c + j] += other.data[j];
                }
            }
        } else {
            return Err(Error::ShapeMismatch(format!(
                "add {:?} + {:?}",
                self.shape, other.shape
            )));
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> DenseArray {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= c;
        }
        out
    }

    pub fn relu(&self) -> DenseArray {
        let mut out = self.clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out
    }

    /// Plain rowwise L2 normalization with the norm floor.
    pub fn l2_normalize_rows(&self) -> DenseArray {
        let (m, c) = (self.rows(), self.cols());
        let mut out = self.clone();
        for r in 0..m {
            let norm = math::sqrt(self.row(r).iter().map(|v| v * v).sum::<f64>());
            let denom = norm.max(NORM_FLOOR);
            for j in 0..c {
                out.data[r * c + j] /= denom;
            }
        }
        out
    }

    /// Plain rowwise softmax of `self / temperature`, max-subtracted.
    pub fn softmax_rows(&self, temperature: f64) -> Result<DenseArray> {
        if temperature <= 0.0 {
            return Err(Error::Domain(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let (m, c) = (self.rows(), self.cols());
        let mut out = self.clone();
        for r in 0..m {
            let row = &mut out.data[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = math::exp((*v - max) / temperature);
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(out)
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Result<DenseArray> {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::Invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        DenseArray::matrix(indices.len(), c, data)
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    MatmulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    MulConst(NodeId, DenseArray),
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    Sum(NodeId),
    SumRows(NodeId),
    Mean(NodeId),
    L2NormalizeRows(NodeId, Vec<f64>),
    Softmax(NodeId, f64),
    GatherRows(NodeId, Vec<usize>),
}

struct Node {
    value: DenseArray,
    grad: DenseArray,
    op: Op,
    requires_grad: bool,
}

/// A computation tape. Confined to one logical thread during construction
/// and backward; distinct graphs are independent.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: DenseArray, op: Op, requires_grad: bool) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite("operation produced NaN/Inf".into()));
        }
        let grad = DenseArray::zeros(value.shape.clone());
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A differentiable leaf (parameter or checked input).
    pub fn leaf(&mut self, value: DenseArray) -> Result<NodeId> {
        self.push(value, Op::Leaf, true)
    }

    /// A stop-gradient leaf: no gradient is ever propagated into it.
    pub fn constant(&mut self, value: DenseArray) -> Result<NodeId> {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &DenseArray {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node (populated by [`Graph::backward`]).
    pub fn grad(&self, id: NodeId) -> &DenseArray {
        &self.nodes[id.0].grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Matmul(a, b), rg)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0].value.matmul_nt(&self.nodes[b.0].value)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatmulNT(a, b), rg)
    }

    /// Elementwise add; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0].value.add(&self.nodes[b.0].value)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.nodes[a.0].value.scale(c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    /// Elementwise product with a constant array of identical shape.
    pub fn mul_const(&mut self, a: NodeId, weights: DenseArray) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if av.shape != weights.shape {
            return Err(Error::ShapeMismatch(format!(
                "mul_const {:?} * {:?}",
                av.shape, weights.shape
            )));
        }
        let mut v = av.clone();
        for (o, w) in v.data.iter_mut().zip(&weights.data) {
            *o *= w;
        }
        let rg = self.rg(a);
        self.push(v, Op::MulConst(a, weights), rg)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let mut v = self.nodes[a.0].value.clone();
        for x in &mut v.data {
            *x = math::exp(*x);
        }
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    /// Natural log; requires strictly positive inputs.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let mut v = self.nodes[a.0].value.clone();
        for x in &mut v.data {
            if *x <= 0.0 {
                return Err(Error::Domain(format!("log of non-positive value {x}")));
            }
            *x = math::ln(*x);
        }
        let rg = self.rg(a);
        self.push(v, Op::Log(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0].value.relu();
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        let rg = self.rg(a);
        self.push(DenseArray::scalar(s), Op::Sum(a), rg)
    }

    /// Row sums of a rank-2 array, as an `m x 1` column.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let (m, c) = (av.rows(), av.cols());
        let data: Vec<f64> = (0..m).map(|r| av.row(r).iter().sum()).collect();
        let _ = c;
        let rg = self.rg(a);
        self.push(DenseArray::matrix(m, 1, data)?, Op::SumRows(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.nodes[a.0].value.len();
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        let rg = self.rg(a);
        self.push(DenseArray::scalar(s / n as f64), Op::Mean(a), rg)
    }

    /// Rowwise L2 normalization with a `1e-12` norm floor.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let (m, c) = (av.rows(), av.cols());
        let mut norms = Vec::with_capacity(m);
        let mut v = av.clone();
        for r in 0..m {
            let norm = math::sqrt(av.row(r).iter().map(|x| x * x).sum::<f64>());
            let denom = norm.max(NORM_FLOOR);
            norms.push(norm);
            for j in 0..c {
                v.data[r * c + j] /= denom;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::L2NormalizeRows(a, norms), rg)
    }

    /// Rowwise softmax of `a / temperature`, computed with max subtraction.
    pub fn softmax(&mut self, a: NodeId, temperature: f64) -> Result<NodeId> {
        let v = self.nodes[a.0].value.softmax_rows(temperature)?;
        let rg = self.rg(a);
        self.push(v, Op::Softmax(a, temperature), rg)
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let v = self.nodes[a.0].value.gather_rows(&indices)?;
        let rg = self.rg(a);
        self.push(v, Op::GatherRows(a, indices), rg)
    }

    /// Cosine similarity between the rows of `a` and the rows of `b`:
    /// L2-normalize both (with the norm floor) and take `a * b^T`.
    pub fn cosine_similarity_matrix(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let an = self.l2_normalize_rows(a)?;
        let bn = self.l2_normalize_rows(b)?;
        self.matmul_nt(an, bn)
    }

    /// Reverse-mode accumulation from a scalar root.
    ///
    /// Gradients are added into each node's stored gradient, so repeated
    /// calls without a reset accumulate.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Invalid(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape
            )));
        }
        // Per-call adjoint buffers; merged into stored grads at the end so
        // a second backward call cannot double-count.
        let mut adj: Vec<Option<DenseArray>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(DenseArray::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        for (i, a) in adj.into_iter().enumerate() {
            if let Some(a) = a {
                for (s, v) in self.nodes[i].grad.data.iter_mut().zip(&a.data) {
                    *s += v;
                }
            }
        }
        Ok(())
    }

    fn accumulate(adj: &mut [Option<DenseArray>], target: usize, shape: &[usize], add: &[f64]) {
        let slot = adj[target].get_or_insert_with(|| DenseArray::zeros(shape.to_vec()));
        for (s, v) in slot.data.iter_mut().zip(add) {
            *s += v;
        }
    }

    fn propagate(&self, i: usize, g: &DenseArray, adj: &mut [Option<DenseArray>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.rg(*a) {
                    // dA = G * B^T
                    let da = g.matmul_nt(bv).expect("shapes checked at forward");
                    Self::accumulate(adj, a.0, &av.shape, &da.data);
                }
                if self.rg(*b) {
                    // dB = A^T * G
                    let (m, k, n) = (av.rows(), av.cols(), g.cols());
                    let mut db = vec![0.0; k * n];
                    for p in 0..m {
                        for q in 0..k {
                            let aval = av.data[p * k + q];
                            if aval == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[q * n + j] += aval * g.data[p * n + j];
                            }
                        }
                    }
                    Self::accumulate(adj, b.0, &bv.shape, &db);
                }
            }
            Op::MatmulNT(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.rg(*a) {
                    // dA = G * B
                    let da = g.matmul(bv).expect("shapes checked at forward");
                    Self::accumulate(adj, a.0, &av.shape, &da.data);
                }
                if self.rg(*b) {
                    // dB = G^T * A
                    let (m, n, k) = (av.rows(), bv.rows(), av.cols());
                    let mut db = vec![0.0; n * k];
                    for r in 0..m {
                        for j in 0..n {
                            let gv = g.data[r * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for q in 0..k {
                                db[j * k + q] += gv * av.data[r * k + q];
                            }
                        }
                    }
                    Self::accumulate(adj, b.0, &bv.shape, &db);
                }
            }
            Op::Add(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.rg(*a) {
                    Self::accumulate(adj, a.0, &av.shape, &g.data);
                }
                if self.rg(*b) {
                    if bv.len() == g.len() {
                        Self::accumulate(adj, b.0, &bv.shape, &g.data);
                    } else {
                        // Broadcast row: column sums of the upstream grad.
                        let c = g.cols();
                        let mut db = vec![0.0; c];
                        for r in 0..g.rows() {
                            for j in 0..c {
                                db[j] += g.data[r * c + j];
                            }
                        }
                        Self::accumulate(adj, b.0, &bv.shape, &db);
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    let da: Vec<f64> = g.data.iter().map(|v| v * c).collect();
                    Self::accumulate(adj, a.0, &self.nodes[a.0].value.shape, &da);
                }
            }
            Op::MulConst(a, w) => {
                if self.rg(*a) {
                    let da: Vec<f64> = g.data.iter().zip(&w.data).map(|(v, w)| v * w).collect();
                    Self::accumulate(adj, a.0, &self.nodes[a.0].value.shape, &da);
                }
            }
            Op::Exp(a) => {
                if self.rg(*a) {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(v, y)| v * y)
                        .collect();
                    Self::accumulate(adj, a.0, &self.nodes[a.0].value.shape, &da);
                }
            }
            Op::Log(a) => {
                if self.rg(*a) {
                    let av = &self.nodes[a.0].value;
                    let da: Vec<f64> = g.data.iter().zip(&av.data).map(|(v, x)| v / x).collect();
                    Self::accumulate(adj, a.0, &av.shape, &da);
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let av = &self.nodes[a.0].value;
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&av.data)
                        .map(|(v, x)| if *x > 0.0 { *v } else { 0.0 })
                        .collect();
                    Self::accumulate(adj, a.0, &av.shape, &da);
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    let av = &self.nodes[a.0].value;
                    let da = vec![g.data[0]; av.len()];
                    Self::accumulate(adj, a.0, &av.shape, &da);
                }
            }
            Op::SumRows(a) => {
                if self.rg(*a) {
                    let av = &self.nodes[a.0].value;
                    let (m, c) = (av.rows(), av.cols());
                    let mut da = vec![0.0; m * c];
                    for r in 0..m {
                        for j in 0..c {
                            da[r * c + j] = g.data[r];
                        }
                    }
                    Self::accumulate(adj, a.0, &av.shape, &da);
                }
            }
            Op::Mean(a) => {
                if self.rg(*a) {
                    let av = &self.nodes[a.0].value;
                    let da = vec![g.data[0] / av.len() as f64; av.len()];
                    Self::accumulate(adj, a.0, &av.shape, &da);
                }
            }
            Op::L2NormalizeRows(a, norms) => {
                if self.rg(*a) {
                    let av = &self.nodes[a.0].value;
                    let (m, c) = (av.rows(), av.cols());
                    let mut da = vec![0.0; m * c];
                    for r in 0..m {
                        let norm = norms[r];
                        if norm > NORM_FLOOR {
                            let y = node.value.row(r);
                            let gr = &g.data[r * c..(r + 1) * c];
                            let dot: f64 = gr.iter().zip(y).map(|(gv, yv)| gv * yv).sum();
                            for j in 0..c {
                                da[r * c + j] = (gr[j] - y[j] * dot) / norm;
                            }
                        } else {
                            // Floored rows are a plain scaling by 1/floor.
                            for j in 0..c {
                                da[r * c + j] = g.data[r * c + j] / NORM_FLOOR;
                            }
                        }
                    }
                    Self::accumulate(adj, a.0, &av.shape, &da);
                }
            }
            Op::Softmax(a, temperature) => {
                if self.rg(*a) {
                    let av = &self.nodes[a.0].value;
                    let (m, c) = (av.rows(), av.cols());
                    let mut da = vec![0.0; m * c];
                    for r in 0..m {
                        let y = node.value.row(r);
                        let gr = &g.data[r * c..(r + 1) * c];
                        let dot: f64 = gr.iter().zip(y).map(|(gv, yv)| gv * yv).sum();
                        for j in 0..c {
                            da[r * c + j] = y[j] * (gr[j] - dot) / temperature;
                        }
                    }
                    Self::accumulate(adj, a.0, &av.shape, &da);
                }
            }
            Op::GatherRows(a, indices) => {
                if self.rg(*a) {
                    let av = &self.nodes[a.0].value;
                    let c = av.cols();
                    let mut da = vec![0.0; av.len()];
                    for (out_r, &src_r) in indices.iter().enumerate() {
                        for j in 0..c {
                            da[src_r * c + j] += g.data[out_r * c + j];
                        }
                    }
                    Self::accumulate(adj, a.0, &av.shape, &da);
                }
            }
        }
    }
}

/// Max relative error between the analytic gradient of `f` at `point` and
/// central finite differences with step `eps`.
///
/// `f` rebuilds its computation on the supplied graph from the given input
/// leaf and returns the scalar output node. The relative error per
/// coordinate is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, point: &DenseArray, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let eval = |value: DenseArray| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(value)?;
        let out = f(&mut g, leaf)?;
        let v = g.value(out).scalar_value();
        if !v.is_finite() {
            return Err(Error::NonFinite("objective at perturbed point".into()));
        }
        Ok(v)
    };

    // Analytic pass.
    let mut g = Graph::new();
    let leaf = g.leaf(point.clone())?;
    let out = f(&mut g, leaf)?;
    g.backward(out)?;
    let analytic = g.grad(leaf).clone();

    let mut max_err = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
