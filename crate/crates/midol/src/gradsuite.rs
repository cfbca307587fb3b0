//! Finite-difference gradient suite: every differentiable primitive plus
//! both training losses end to end on micro-batches.

use midol_core::losses::{intra_contrastive_loss_expert, routing_consistency_loss};
use midol_core::rng::SeedStream;
use midol_core::tensor::{grad_check, DenseArray, Graph, NodeId};
use serde::Serialize;

pub const TOLERANCE: f64 = 1e-5;
const EPS: f64 = 1e-6;

/// Result of checking one operation at `points` perturbed coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub name: String,
    pub points: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn weighted_sum(
    g: &mut Graph,
    node: NodeId,
    rng: &mut SeedStream,
) -> midol_core::error::Result<NodeId> {
    let shape = g.value(node).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = DenseArray::new(shape, rng.normal_vec(n))?;
    let prod = g.mul_const(node, w)?;
    g.sum(prod)
}

fn normal_point(rows: usize, cols: usize, rng: &mut SeedStream) -> DenseArray {
    DenseArray::matrix(rows, cols, rng.normal_vec(rows * cols)).unwrap()
}

fn positive_point(rows: usize, cols: usize, rng: &mut SeedStream) -> DenseArray {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(0.5, 2.0)).collect();
    DenseArray::matrix(rows, cols, data).unwrap()
}

struct Check {
    name: &'static str,
    /// Builds a scalar graph output from the leaf under test; the second
    /// stream seeds any auxiliary constants.
    build: fn(&mut Graph, NodeId, &mut SeedStream) -> midol_core::error::Result<NodeId>,
    positive_input: bool,
}

fn primitive_checks() -> Vec<Check> {
    vec![
        Check {
            name: "matmul",
            build: |g, x, rng| {
                let b = g.constant(normal_point(5, 3, rng))?;
                let y = g.matmul(x, b)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "matmul_nt",
            build: |g, x, rng| {
                let b = g.constant(normal_point(6, 5, rng))?;
                let y = g.matmul_nt(x, b)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "add_broadcast",
            build: |g, x, rng| {
                let b = g.constant(normal_point(1, 5, rng))?;
                let y = g.add(x, b)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "scale",
            build: |g, x, rng| {
                let y = g.scale(x, -1.75)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "mul_const",
            build: |g, x, rng| {
                let w = normal_point(4, 5, rng);
                let y = g.mul_const(x, w)?;
                g.sum(y)
            },
            positive_input: false,
        },
        Check {
            name: "exp",
            build: |g, x, rng| {
                let y = g.exp(x)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "log",
            build: |g, x, rng| {
                let y = g.log(x)?;
                weighted_sum(g, y, rng)
            },
            positive_input: true,
        },
        Check {
            name: "relu",
            build: |g, x, rng| {
                let y = g.relu(x)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "sum",
            build: |g, x, _| g.sum(x),
            positive_input: false,
        },
        Check {
            name: "sum_rows",
            build: |g, x, rng| {
                let y = g.sum_rows(x)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "mean",
            build: |g, x, _| g.mean(x),
            positive_input: false,
        },
        Check {
            name: "l2_normalize_rows",
            build: |g, x, rng| {
                let y = g.l2_normalize_rows(x)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "softmax",
            build: |g, x, rng| {
                let y = g.softmax(x, 0.5)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "gather_rows",
            build: |g, x, rng| {
                let y = g.gather_rows(x, vec![2, 0, 2, 3])?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
        Check {
            name: "cosine_similarity",
            build: |g, x, rng| {
                let b = g.constant(normal_point(3, 5, rng))?;
                let y = g.cosine_similarity_matrix(x, b)?;
                weighted_sum(g, y, rng)
            },
            positive_input: false,
        },
    ]
}

fn run_check(check: &Check, min_points: usize, seed: u64) -> GradCheckResult {
    let mut max_err = 0.0f64;
    let mut points = 0usize;
    let mut trial = 0u64;
    while points < min_points {
        let mut point_rng = SeedStream::new(seed).derive(check.name).derive_u64(trial);
        let point = if check.positive_input {
            positive_point(4, 5, &mut point_rng)
        } else {
            normal_point(4, 5, &mut point_rng)
        };
        points += point.len();
        let err = grad_check(
            |g, x| {
                let mut aux = SeedStream::new(seed ^ 0xa5a5).derive(check.name).derive_u64(trial);
                (check.build)(g, x, &mut aux)
            },
            &point,
            EPS,
        )
        .expect("finite inputs");
        max_err = max_err.max(err);
        trial += 1;
    }
    GradCheckResult {
        name: check.name.to_string(),
        points,
        max_rel_err: max_err,
        pass: max_err < TOLERANCE,
    }
}

fn run_loss_check(
    name: &str,
    min_points: usize,
    seed: u64,
    f: impl Fn(&mut Graph, NodeId, &DenseArray) -> midol_core::error::Result<NodeId>,
) -> GradCheckResult {
    // Micro-batch: 2 images, 2 views, N=2 experts (embedding dim 3).
    let mut max_err = 0.0f64;
    let mut points = 0usize;
    let mut trial = 0u64;
    while points < min_points {
        let mut rng = SeedStream::new(seed).derive(name).derive_u64(trial);
        let cols = if name == "l_route" { 2 } else { 3 };
        let point = normal_point(4, cols, &mut rng);
        let teacher = normal_point(4, cols, &mut rng);
        points += point.len();
        let err = grad_check(|g, x| f(g, x, &teacher), &point, EPS).expect("finite inputs");
        max_err = max_err.max(err);
        trial += 1;
    }
    GradCheckResult {
        name: name.to_string(),
        points,
        max_rel_err: max_err,
        pass: max_err < TOLERANCE,
    }
}

/// Runs the whole suite with at least `min_points` perturbed coordinates
/// per check.
pub fn run_suite(min_points: usize, seed: u64) -> Vec<GradCheckResult> {
    let mut results: Vec<GradCheckResult> = primitive_checks()
        .iter()
        .map(|c| run_check(c, min_points, seed))
        .collect();
    results.push(run_loss_check("l_route", min_points, seed, |g, x, teacher| {
        let probs = g.softmax(x, 1.0)?;
        let t = teacher.softmax_rows(1.0)?;
        routing_consistency_loss(g, probs, &t, 2, 2)
    }));
    results.push(run_loss_check("l_cst", min_points, seed, |g, x, teacher| {
        let xn = g.l2_normalize_rows(x)?;
        let t = teacher.l2_normalize_rows();
        intra_contrastive_loss_expert(g, xn, &t, 0.04, 2, 2)
    }));
    results
}
