//! The MoE projector: router, Sinkhorn balancing, top-1 experts.
//!
//! The student routes with a plain softmax over router logits and keeps the
//! gradient path to the router weights. The teacher routes through
//! Sinkhorn-Knopp balancing (rows sum to 1, columns to batch/N), which
//! prevents all samples from collapsing onto a single expert; its output is
//! always detached. Expert selection is hard top-1 with lowest-index
//! tie-break, and only the selected expert's parameters sit on the gradient
//! path of the projected representation.

use crate::encoder::{ema_update_tensors, fan_in_uniform};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::{DenseArray, Graph, NodeId};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub const DEFAULT_EXPERT_HIDDEN: usize = 32;
pub const DEFAULT_OUTPUT_DIM: usize = 16;
pub const DEFAULT_NUM_EXPERTS: usize = 5;
pub const DEFAULT_SINKHORN_ITERS: usize = 3;
pub const DEFAULT_SINKHORN_EPSILON: f64 = 0.05;

/// One expert feed-forward network (embed -> hidden -> embed, relu).
#[derive(Debug, Clone)]
pub struct ExpertFfn {
    pub w1: DenseArray,
    pub b1: DenseArray,
    pub w2: DenseArray,
    pub b2: DenseArray,
}

impl ExpertFfn {
    fn init(embed: usize, hidden: usize, rng: &mut SeedStream) -> Self {
        ExpertFfn {
            w1: fan_in_uniform(embed, hidden, rng),
            b1: DenseArray::zeros(vec![1, hidden]),
            w2: fan_in_uniform(hidden, embed, rng),
            b2: DenseArray::zeros(vec![1, embed]),
        }
    }
}

/// Router weights, N expert FFNs, and the shared output projection.
#[derive(Debug, Clone)]
pub struct MoeParams {
    pub router: DenseArray,
    pub experts: Vec<ExpertFfn>,
    pub proj_w: DenseArray,
    pub proj_b: DenseArray,
}

impl MoeParams {
    pub fn init(
        embed: usize,
        expert_hidden: usize,
        output: usize,
        num_experts: usize,
        rng: &mut SeedStream,
    ) -> Result<Self> {
        if num_experts < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 experts, got {num_experts}"
            )));
        }
        Ok(MoeParams {
            router: fan_in_uniform(embed, num_experts, rng),
            experts: (0..num_experts)
                .map(|_| ExpertFfn::init(embed, expert_hidden, rng))
                .collect(),
            proj_w: fan_in_uniform(embed, output, rng),
            proj_b: DenseArray::zeros(vec![1, output]),
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.router.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.proj_w.shape()[1]
    }

    pub fn tensors(&self) -> Vec<&DenseArray> {
        let mut t = vec![&self.router];
        for e in &self.experts {
            t.extend([&e.w1, &e.b1, &e.w2, &e.b2]);
        }
        t.extend([&self.proj_w, &self.proj_b]);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseArray> {
        let mut t = vec![&mut self.router];
        for e in &mut self.experts {
            t.extend([&mut e.w1, &mut e.b1, &mut e.w2, &mut e.b2]);
        }
        t.extend([&mut self.proj_w, &mut self.proj_b]);
        t
    }

    /// EMA update of the whole projector (router, experts, projection).
    pub fn ema_update_from(&mut self, student: &MoeParams, lambda: f64) -> Result<()> {
        ema_update_tensors(&mut self.tensors_mut(), &student.tensors(), lambda)
    }

    /// Plain softmax routing probabilities (no graph, no Sinkhorn).
    pub fn route_plain(&self, features: &DenseArray) -> Result<DenseArray> {
        features.matmul(&self.router)?.softmax_rows(1.0)
    }

    /// Plain forward through expert `index` and the shared projection,
    /// rows L2-normalized.
    pub fn expert_forward_plain(&self, features: &DenseArray, index: usize) -> Result<DenseArray> {
        let e = self
            .experts
            .get(index)
            .ok_or_else(|| Error::Invalid(format!("expert index {index} out of range")))?;
        let h = features.matmul(&e.w1)?.add(&e.b1)?.relu();
        let z = h.matmul(&e.w2)?.add(&e.b2)?;
        let p = z.matmul(&self.proj_w)?.add(&self.proj_b)?;
        Ok(p.l2_normalize_rows())
    }
}

/// How a routing matrix was produced, which fixes its marginal contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutingMode {
    /// Rows sum to 1 (softmax per sample); differentiable on the student.
    StudentSoftmax,
    /// Rows sum to 1 and columns to batch/N (Sinkhorn-balanced); detached.
    TeacherSinkhorn,
}

/// Batch x experts assignment scores with their marginal contract.
#[derive(Debug, Clone)]
pub struct RoutingMatrix {
    pub scores: DenseArray,
    pub mode: RoutingMode,
}

impl RoutingMatrix {
    pub fn num_experts(&self) -> usize {
        self.scores.cols()
    }

    pub fn batch(&self) -> usize {
        self.scores.rows()
    }
}

/// Graph leaves for the student projector's parameters.
#[derive(Debug, Clone)]
pub struct MoeNodes {
    pub router: NodeId,
    pub experts: Vec<[NodeId; 4]>,
    pub proj_w: NodeId,
    pub proj_b: NodeId,
}

impl MoeNodes {
    pub fn insert(graph: &mut Graph, params: &MoeParams) -> Result<Self> {
        let router = graph.leaf(params.router.clone())?;
        let mut experts = Vec::with_capacity(params.experts.len());
        for e in &params.experts {
            experts.push([
                graph.leaf(e.w1.clone())?,
                graph.leaf(e.b1.clone())?,
                graph.leaf(e.w2.clone())?,
                graph.leaf(e.b2.clone())?,
            ]);
        }
        Ok(MoeNodes {
            router,
            experts,
            proj_w: graph.leaf(params.proj_w.clone())?,
            proj_b: graph.leaf(params.proj_b.clone())?,
        })
    }

    pub fn ids(&self) -> Vec<NodeId> {
        let mut ids = vec![self.router];
        for e in &self.experts {
            ids.extend_from_slice(e);
        }
        ids.extend([self.proj_w, self.proj_b]);
        ids
    }
}

/// Student routing: softmax over router logits, differentiable through
/// both the router weights and the features (the consistency pressure is
/// what teaches the encoder to route augmented views together); the
/// teacher side never enters the graph.
pub fn route_student(graph: &mut Graph, nodes: &MoeNodes, features: NodeId) -> Result<NodeId> {
    let logits = graph.matmul(features, nodes.router)?;
    graph.softmax(logits, 1.0)
}

/// Sinkhorn-Knopp balancing: `iters` rounds of column normalization
/// (columns to `rows / cols`) followed by row normalization (rows to 1),
/// ending on the row step.
pub fn sinkhorn_knopp(scores: &DenseArray, iters: usize) -> Result<DenseArray> {
    if iters == 0 {
        return Err(Error::Invalid("sinkhorn needs at least 1 iteration".into()));
    }
    let (rows, cols) = (scores.rows(), scores.cols());
    if rows < cols {
        return Err(Error::Invalid(format!(
            "batch {rows} smaller than expert count {cols}: column target {rows}/{cols} unattainable"
        )));
    }
    for &v in scores.data() {
        if !(v > 0.0) {
            return Err(Error::Domain(format!("non-positive score entry {v}")));
        }
    }
    let col_target = rows as f64 / cols as f64;
    let mut m = scores.clone();
    for _ in 0..iters {
        // Column step.
        for j in 0..cols {
            let sum: f64 = (0..rows).map(|r| m.at(r, j)).sum();
            let f = col_target / sum;
            for r in 0..rows {
                m.set(r, j, m.at(r, j) * f);
            }
        }
        // Row step.
        for r in 0..rows {
            let sum: f64 = m.row(r).iter().sum();
            for j in 0..cols {
                m.set(r, j, m.at(r, j) / sum);
            }
        }
    }
    Ok(m)
}

/// Teacher routing: exp(logits / epsilon) balanced by Sinkhorn-Knopp.
/// The result is a detached value, never part of a gradient graph.
pub fn route_teacher(
    params: &MoeParams,
    features: &DenseArray,
    epsilon: f64,
    iters: usize,
) -> Result<RoutingMatrix> {
    if epsilon <= 0.0 {
        return Err(Error::Domain(format!(
            "sinkhorn temperature must be positive, got {epsilon}"
        )));
    }
    let logits = features.matmul(&params.router)?;
    // Global max subtraction is a uniform scaling of exp(logits/eps), which
    // Sinkhorn is invariant to; it only guards against overflow. The
    // exponent floor keeps extreme logit gaps from underflowing to exact
    // zeros, which Sinkhorn rejects; entries that far down carry no usable
    // preference anyway.
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut scores = logits.clone();
    for v in scores.data_mut() {
        *v = crate::math::exp(((*v - max) / epsilon).max(-700.0));
    }
    let balanced = sinkhorn_knopp(&scores, iters)?;
    Ok(RoutingMatrix {
        scores: balanced,
        mode: RoutingMode::TeacherSinkhorn,
    })
}

/// Top-1 selection: argmax with lowest-index tie-break.
pub fn select_expert(routing_row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in routing_row.iter().enumerate() {
        if v > routing_row[best] {
            best = i;
        }
    }
    best
}

/// Expert forward on the graph: the selected expert's FFN, the shared
/// projection, then rowwise L2 normalization. Only the selected expert's
/// parameters receive gradient.
pub fn expert_forward(
    graph: &mut Graph,
    nodes: &MoeNodes,
    features: NodeId,
    index: usize,
) -> Result<NodeId> {
    let [w1, b1, w2, b2] = *nodes
        .experts
        .get(index)
        .ok_or_else(|| Error::Invalid(format!("expert index {index} out of range")))?;
    let h = graph.matmul(features, w1)?;
    let h = graph.add(h, b1)?;
    let h = graph.relu(h)?;
    let z = graph.matmul(h, w2)?;
    let z = graph.add(z, b2)?;
    let p = graph.matmul(z, nodes.proj_w)?;
    let p = graph.add(p, nodes.proj_b)?;
    graph.l2_normalize_rows(p)
}
