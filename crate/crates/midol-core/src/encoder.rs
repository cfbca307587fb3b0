//! Siamese student/teacher MLP encoders with EMA momentum updates.
//!
//! The encoder is a two-layer MLP (linear, relu, linear) standing in for a
//! large vision backbone; the mechanism under study (routing + losses) does
//! not depend on the backbone. The teacher is never differentiated: its
//! forward pass produces stop-gradient leaves, and its parameters track the
//! student by exponential moving average on a cosine momentum schedule.

use crate::error::{Error, Result};
use crate::math;
use crate::rng::SeedStream;
use crate::tensor::{DenseArray, Graph, NodeId};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub const DEFAULT_INPUT_DIM: usize = 32;
pub const DEFAULT_HIDDEN_DIM: usize = 64;
pub const DEFAULT_EMBED_DIM: usize = 16;

/// Parameters of the two-layer MLP encoder.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w1: DenseArray,
    pub b1: DenseArray,
    pub w2: DenseArray,
    pub b2: DenseArray,
}

/// Uniform init scaled by 1/sqrt(fan_in).
pub(crate) fn fan_in_uniform(rows: usize, cols: usize, rng: &mut SeedStream) -> DenseArray {
    let bound = 1.0 / math::sqrt(rows as f64);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    DenseArray::matrix(rows, cols, data).expect("positive extents")
}

impl MlpParams {
    pub fn init(input: usize, hidden: usize, embed: usize, rng: &mut SeedStream) -> Self {
        MlpParams {
            w1: fan_in_uniform(input, hidden, rng),
            b1: DenseArray::zeros(vec![1, hidden]),
            w2: fan_in_uniform(hidden, embed, rng),
            b2: DenseArray::zeros(vec![1, embed]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn tensors(&self) -> Vec<&DenseArray> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseArray> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Plain forward pass outside any graph: linear, relu, linear.
    pub fn forward_plain(&self, input: &DenseArray) -> Result<DenseArray> {
        let h = input.matmul(&self.w1)?.add(&self.b1)?.relu();
        h.matmul(&self.w2)?.add(&self.b2)
    }
}

/// Graph leaves for the student's encoder parameters.
#[derive(Debug, Clone, Copy)]
pub struct MlpNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl MlpNodes {
    pub fn insert(graph: &mut Graph, params: &MlpParams) -> Result<Self> {
        Ok(MlpNodes {
            w1: graph.leaf(params.w1.clone())?,
            b1: graph.leaf(params.b1.clone())?,
            w2: graph.leaf(params.w2.clone())?,
            b2: graph.leaf(params.b2.clone())?,
        })
    }

    pub fn ids(&self) -> [NodeId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn forward(&self, graph: &mut Graph, input: NodeId) -> Result<NodeId> {
        let z1 = graph.matmul(input, self.w1)?;
        let z1 = graph.add(z1, self.b1)?;
        let h = graph.relu(z1)?;
        let z2 = graph.matmul(h, self.w2)?;
        graph.add(z2, self.b2)
    }
}

/// Encoder forward as one entry point for both branches.
///
/// With `differentiable` set, the parameters are inserted as graph leaves and
/// the returned nodes carry gradients back to them. Without it (the teacher
/// branch), the value is computed out-of-graph and wrapped as a stop-gradient
/// leaf, so backward contributes nothing to these parameters.
pub fn mlp_forward(
    graph: &mut Graph,
    params: &MlpParams,
    input: &DenseArray,
    differentiable: bool,
) -> Result<(NodeId, Option<MlpNodes>)> {
    if input.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input width {} != encoder input dim {}",
            input.cols(),
            params.input_dim()
        )));
    }
    if differentiable {
        let nodes = MlpNodes::insert(graph, params)?;
        let input = graph.constant(input.clone())?;
        let out = nodes.forward(graph, input)?;
        Ok((out, Some(nodes)))
    } else {
        let value = params.forward_plain(input)?;
        Ok((graph.constant(value)?, None))
    }
}

/// EMA update: every teacher tensor becomes `lambda * teacher + (1 - lambda) * student`.
pub fn ema_update(teacher: &mut MlpParams, student: &MlpParams, lambda: f64) -> Result<()> {
    ema_update_tensors(&mut teacher.tensors_mut(), &student.tensors(), lambda)
}

pub(crate) fn ema_update_tensors(
    teacher: &mut [&mut DenseArray],
    student: &[&DenseArray],
    lambda: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")));
    }
    if teacher.len() != student.len() {
        return Err(Error::ShapeMismatch("parameter list lengths differ".into()));
    }
    for (t, s) in teacher.iter_mut().zip(student) {
        if t.shape() != s.shape() {
            return Err(Error::ShapeMismatch(format!(
                "ema {:?} vs {:?}",
                t.shape(),
                s.shape()
            )));
        }
        for (tv, sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = lambda * *tv + (1.0 - lambda) * sv;
        }
    }
    Ok(())
}

/// Cosine momentum schedule from `base` at step 0 to 1 at step `total_steps`.
#[derive(Debug, Clone, Copy)]
pub struct MomentumSchedule {
    pub base: f64,
    pub total_steps: u64,
}

impl MomentumSchedule {
    pub fn new(base: f64, total_steps: u64) -> Result<Self> {
        if !(0.996..1.0).contains(&base) {
            return Err(Error::Domain(format!(
                "base momentum {base} outside [0.996, 1)"
            )));
        }
        if total_steps == 0 {
            return Err(Error::Invalid("schedule needs at least one step".into()));
        }
        Ok(MomentumSchedule { base, total_steps })
    }

    /// lambda(t) = 1 - (1 - base) * (cos(pi t / T) + 1) / 2.
    pub fn momentum_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Invalid(format!(
                "step {step} past schedule end {}",
                self.total_steps
            )));
        }
        let frac = step as f64 / self.total_steps as f64;
        Ok(1.0 - (1.0 - self.base) * (math::cos(math::PI * frac) + 1.0) / 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    #[test]
    fn zero_params_give_zero_embedding() {
        let p = MlpParams {
            w1: DenseArray::zeros(vec![4, 3]),
            b1: DenseArray::zeros(vec![1, 3]),
            w2: DenseArray::zeros(vec![3, 2]),
            b2: DenseArray::zeros(vec![1, 2]),
        };
        let input = DenseArray::matrix(2, 4, vec![1.0; 8]).unwrap();
        let out = p.forward_plain(&input).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_weights_pass_nonnegative_input_through() {
        let eye = |n: usize| {
            let mut m = DenseArray::zeros(vec![n, n]);
            for i in 0..n {
                m.set(i, i, 1.0);
            }
            m
        };
        let p = MlpParams {
            w1: eye(3),
            b1: DenseArray::zeros(vec![1, 3]),
            w2: eye(3),
            b2: DenseArray::zeros(vec![1, 3]),
        };
        let input = DenseArray::matrix(1, 3, vec![0.5, 0.0, 2.0]).unwrap();
        let out = p.forward_plain(&input).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn graph_forward_matches_plain_arithmetic_oracle() {
        let mut rng = SeedStream::new(21);
        let p = MlpParams::init(5, 7, 3, &mut rng);
        let input = DenseArray::matrix(4, 5, rng.normal_vec(20)).unwrap();

        let mut g = Graph::new();
        let (out, _) = mlp_forward(&mut g, &p, &input, true).unwrap();

        // Oracle: recompute with plain loops, outside the graph.
        for r in 0..4 {
            for c in 0..3 {
                let mut expected = p.b2.data()[c];
                for h in 0..7 {
                    let mut pre = p.b1.data()[h];
                    for i in 0..5 {
                        pre += input.at(r, i) * p.w1.at(i, h);
                    }
                    expected += pre.max(0.0) * p.w2.at(h, c);
                }
                assert!((g.value(out).at(r, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn teacher_forward_is_stop_gradient() {
        let mut rng = SeedStream::new(22);
        let p = MlpParams::init(4, 6, 2, &mut rng);
        let input = DenseArray::matrix(3, 4, rng.normal_vec(12)).unwrap();
        let mut g = Graph::new();
        let (out, nodes) = mlp_forward(&mut g, &p, &input, false).unwrap();
        assert!(nodes.is_none());
        let s = g.sum(out).unwrap();
        g.backward(s).unwrap();
        // The output node is a constant leaf; no gradient flows anywhere.
        assert!(g.grad(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = SeedStream::new(23);
        let p = MlpParams::init(4, 5, 3, &mut rng);
        let input = DenseArray::matrix(2, 4, rng.normal_vec(8)).unwrap();
        // Check the gradient with respect to w1 through the whole MLP.
        let err = grad_check(
            move |g, w1| {
                let inp = g.constant(input.clone())?;
                let z1 = g.matmul(inp, w1)?;
                let b1 = g.constant(p.b1.clone())?;
                let z1 = g.add(z1, b1)?;
                let h = g.relu(z1)?;
                let w2 = g.constant(p.w2.clone())?;
                let z2 = g.matmul(h, w2)?;
                let b2 = g.constant(p.b2.clone())?;
                let out = g.add(z2, b2)?;
                let e = g.exp(out)?;
                g.sum(e)
            },
            &MlpParams::init(4, 5, 3, &mut SeedStream::new(24)).w1,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "err {err}");
    }

    #[test]
    fn ema_endpoints_and_midpoint() {
        let make = |v: f64| MlpParams {
            w1: DenseArray::matrix(1, 1, vec![v]).unwrap(),
            b1: DenseArray::matrix(1, 1, vec![v]).unwrap(),
            w2: DenseArray::matrix(1, 1, vec![v]).unwrap(),
            b2: DenseArray::matrix(1, 1, vec![v]).unwrap(),
        };
        let student = make(4.0);

        let mut teacher = make(2.0);
        ema_update(&mut teacher, &student, 1.0).unwrap();
        assert_eq!(teacher.w1.data()[0], 2.0);

        let mut teacher = make(2.0);
        ema_update(&mut teacher, &student, 0.0).unwrap();
        assert_eq!(teacher.w1.data()[0], 4.0);

        let mut teacher = make(2.0);
        ema_update(&mut teacher, &student, 0.5).unwrap();
        assert_eq!(teacher.w1.data()[0], 3.0);
    }

    #[test]
    fn ema_rejects_bad_lambda() {
        let mut rng = SeedStream::new(1);
        let s = MlpParams::init(2, 2, 2, &mut rng);
        let mut t = s.clone();
        assert!(ema_update(&mut t, &s, 1.5).is_err());
        assert!(ema_update(&mut t, &s, -0.1).is_err());
    }

    #[test]
    fn ema_stays_in_convex_hull() {
        let mut rng = SeedStream::new(30);
        let student = MlpParams::init(3, 3, 3, &mut rng);
        let mut teacher = MlpParams::init(3, 3, 3, &mut rng);
        let lo_hi: Vec<(f64, f64)> = teacher
            .tensors()
            .iter()
            .zip(student.tensors())
            .flat_map(|(t, s)| {
                t.data()
                    .iter()
                    .zip(s.data())
                    .map(|(a, b)| (a.min(*b), a.max(*b)))
                    .collect::<Vec<_>>()
            })
            .collect();
        for step in 0..50 {
            let lambda = 0.9 + 0.001 * step as f64 * 0.1;
            ema_update(&mut teacher, &student, lambda).unwrap();
        }
        for (v, (lo, hi)) in teacher
            .tensors()
            .iter()
            .flat_map(|t| t.data().to_vec())
            .zip(lo_hi)
        {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn momentum_schedule_endpoints_and_midpoint() {
        let s = MomentumSchedule::new(0.996, 1000).unwrap();
        assert!((s.momentum_at(0).unwrap() - 0.996).abs() < 1e-15);
        assert!((s.momentum_at(1000).unwrap() - 1.0).abs() < 1e-15);
        assert!((s.momentum_at(500).unwrap() - 0.998).abs() < 1e-12);
        assert!(s.momentum_at(1001).is_err());
    }

    #[test]
    fn momentum_schedule_is_monotone() {
        let s = MomentumSchedule::new(0.997, 200).unwrap();
        let mut prev = 0.0;
        for step in 0..=200 {
            let m = s.momentum_at(step).unwrap();
            assert!(m >= prev);
            prev = m;
        }
    }
}
