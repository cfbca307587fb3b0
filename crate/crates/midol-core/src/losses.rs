//! Training losses: routing consistency, intra-modality contrastive, total.
//!
//! Both losses treat the teacher side as constants: only the student's
//! routing probabilities and embeddings are graph nodes.
//!
//! The routing-consistency loss is the negative cross-entropy between every
//! student view's routing row and every other view's (Sinkhorn-balanced)
//! teacher routing row of the same image; its minimum is 0, reached when
//! student rows are one-hot on the teacher's support. Teacher probabilities
//! are floored at 1e-9 inside the log so near-zero Sinkhorn entries bound
//! the loss instead of producing infinities.
//!
//! The per-expert contrastive loss is multi-positive InfoNCE over the
//! images routed to that expert: positives are the other views of the same
//! image, negatives the views of the other images in the same expert
//! subspace, similarities exp(cos/tau).

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{DenseArray, Graph, NodeId};
use alloc::format;

pub const TEACHER_LOG_FLOOR: f64 = 1e-9;
pub const DEFAULT_TEMPERATURE: f64 = 0.04;

/// Scalar loss values of one training step; `total = l_route + l_cst`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_route: f64,
    pub l_cst: f64,
    pub total: f64,
}

/// Unweighted sum of the two losses.
pub fn total_loss(l_route: f64, l_cst: f64) -> Result<LossBreakdown> {
    if !l_route.is_finite() || !l_cst.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss terms l_route={l_route}, l_cst={l_cst}"
        )));
    }
    Ok(LossBreakdown {
        l_route,
        l_cst,
        total: l_route + l_cst,
    })
}

/// Routing-consistency loss over a batch of images with `views` augmented
/// views each.
///
/// `student_routing` is a `(num_images * views) x N` node with rows grouped
/// per image; `teacher_routing` is the detached teacher matrix in the same
/// layout. Gradient reaches only the student side.
pub fn routing_consistency_loss(
    graph: &mut Graph,
    student_routing: NodeId,
    teacher_routing: &DenseArray,
    num_images: usize,
    views: usize,
) -> Result<NodeId> {
    if views < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 views per image, got {views}"
        )));
    }
    let rows = num_images * views;
    let n = teacher_routing.cols();
    if graph.value(student_routing).rows() != rows || teacher_routing.rows() != rows {
        return Err(Error::ShapeMismatch(format!(
            "routing rows != num_images * views = {rows}"
        )));
    }
    // W[(b,j), i] = sum over the image's other views of log a_T, floored.
    let mut weights = DenseArray::zeros(alloc::vec![rows, n]);
    for b in 0..num_images {
        for j in 0..views {
            for i in 0..n {
                let mut acc = 0.0;
                for gamma in 0..views {
                    if gamma != j {
                        let p = teacher_routing.at(b * views + gamma, i).max(TEACHER_LOG_FLOOR);
                        acc += math::ln(p);
                    }
                }
                weights.set(b * views + j, i, acc);
            }
        }
    }
    let prod = graph.mul_const(student_routing, weights)?;
    let s = graph.sum(prod)?;
    let coef = -1.0 / (num_images as f64 * (views * (views - 1)) as f64);
    graph.scale(s, coef)
}

/// Multi-positive InfoNCE for one expert subspace.
///
/// `student` is a `(|B_i| * views) x E` node of unit-norm rows grouped per
/// image, `teacher` the detached matrix in the same layout. With a single
/// image the numerator equals the denominator and the loss is exactly 0.
pub fn intra_contrastive_loss_expert(
    graph: &mut Graph,
    student: NodeId,
    teacher: &DenseArray,
    temperature: f64,
    num_images: usize,
    views: usize,
) -> Result<NodeId> {
    if temperature <= 0.0 {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if views < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 views per image, got {views}"
        )));
    }
    if num_images == 0 {
        return Err(Error::Invalid("empty expert subset".into()));
    }
    let rows = num_images * views;
    if graph.value(student).rows() != rows || teacher.rows() != rows {
        return Err(Error::ShapeMismatch(format!(
            "embedding rows != num_images * views = {rows}"
        )));
    }

    let teacher_node = graph.constant(teacher.clone())?;
    let sim = graph.matmul_nt(student, teacher_node)?;
    let scaled = graph.scale(sim, 1.0 / temperature)?;
    let scores = graph.exp(scaled)?;

    // Row (b, j): positives are (b, k != j); candidates are (beta, k != j).
    let mut mask_pos = DenseArray::zeros(alloc::vec![rows, rows]);
    let mut mask_all = DenseArray::zeros(alloc::vec![rows, rows]);
    for b in 0..num_images {
        for j in 0..views {
            let r = b * views + j;
            for beta in 0..num_images {
                for k in 0..views {
                    if k == j {
                        continue;
                    }
                    let c = beta * views + k;
                    mask_all.set(r, c, 1.0);
                    if beta == b {
                        mask_pos.set(r, c, 1.0);
                    }
                }
            }
        }
    }
    let num = graph.mul_const(scores, mask_pos)?;
    let num = graph.sum_rows(num)?;
    let den = graph.mul_const(scores, mask_all)?;
    let den = graph.sum_rows(den)?;
    let log_num = graph.log(num)?;
    let log_den = graph.log(den)?;
    let neg_log_den = graph.scale(log_den, -1.0)?;
    let log_ratio = graph.add(log_num, neg_log_den)?;
    let s = graph.sum(log_ratio)?;
    graph.scale(s, -1.0 / (num_images * views) as f64)
}

/// Mean over the `n` expert subspaces; experts with no routed images
/// contribute 0 while the divisor stays `n`.
pub fn aggregate_contrastive_loss(
    graph: &mut Graph,
    per_expert: &[Option<NodeId>],
    n: usize,
) -> Result<NodeId> {
    if n == 0 {
        return Err(Error::Invalid("zero experts".into()));
    }
    let mut acc: Option<NodeId> = None;
    for term in per_expert.iter().flatten() {
        acc = Some(match acc {
            Some(a) => graph.add(a, *term)?,
            None => *term,
        });
    }
    match acc {
        Some(a) => graph.scale(a, 1.0 / n as f64),
        None => graph.constant(DenseArray::scalar(0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use crate::tensor::grad_check;
    use alloc::vec::Vec;

    fn one_hot_rows(rows: usize, n: usize, hot: usize) -> DenseArray {
        let mut m = DenseArray::zeros(alloc::vec![rows, n]);
        for r in 0..rows {
            m.set(r, hot, 1.0);
        }
        m
    }

    fn route_loss_value(
        student: &DenseArray,
        teacher: &DenseArray,
        num_images: usize,
        views: usize,
    ) -> f64 {
        let mut g = Graph::new();
        let s = g.constant(student.clone()).unwrap();
        let l = routing_consistency_loss(&mut g, s, teacher, num_images, views).unwrap();
        g.value(l).scalar_value()
    }

    #[test]
    fn route_loss_aligned_one_hot_is_zero() {
        let rows = one_hot_rows(4, 3, 1); // 2 images, 2 views, all on expert 1
        assert!(route_loss_value(&rows, &rows, 2, 2).abs() < 1e-12);
    }

    #[test]
    fn route_loss_uniform_teacher_is_ln_n() {
        let student = one_hot_rows(2, 2, 0);
        let teacher = DenseArray::matrix(2, 2, alloc::vec![0.5; 4]).unwrap();
        let got = route_loss_value(&student, &teacher, 1, 2);
        assert!((got - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn route_loss_derived_hand_value() {
        // M=2, N=2, a_S = (0.7, 0.3) both views, a_T = (0.6, 0.4) both views.
        let student = DenseArray::matrix(2, 2, alloc::vec![0.7, 0.3, 0.7, 0.3]).unwrap();
        let teacher = DenseArray::matrix(2, 2, alloc::vec![0.6, 0.4, 0.6, 0.4]).unwrap();
        let expected = -(0.7 * math::ln(0.6) + 0.3 * math::ln(0.4));
        let got = route_loss_value(&student, &teacher, 1, 2);
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.632465).abs() < 1e-6);
    }

    #[test]
    fn route_loss_floors_teacher_zeros() {
        let student = DenseArray::matrix(2, 2, alloc::vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let teacher = one_hot_rows(2, 2, 0); // hard zeros in column 1
        let got = route_loss_value(&student, &teacher, 1, 2);
        assert!(got.is_finite());
        // Half the mass pays the floor penalty -ln(1e-9).
        assert!((got - 0.5 * -math::ln(TEACHER_LOG_FLOOR)).abs() < 1e-9);
    }

    #[test]
    fn route_loss_rejects_single_view() {
        let mut g = Graph::new();
        let s = g.constant(one_hot_rows(2, 2, 0)).unwrap();
        let t = one_hot_rows(2, 2, 0);
        assert!(routing_consistency_loss(&mut g, s, &t, 2, 1).is_err());
    }

    #[test]
    fn route_loss_nonnegative_on_random_inputs() {
        let mut rng = SeedStream::new(31);
        for _ in 0..30 {
            let student = DenseArray::matrix(6, 3, rng.normal_vec(18))
                .unwrap()
                .softmax_rows(1.0)
                .unwrap();
            let teacher = DenseArray::matrix(6, 3, rng.normal_vec(18))
                .unwrap()
                .softmax_rows(1.0)
                .unwrap();
            assert!(route_loss_value(&student, &teacher, 2, 3) >= 0.0);
        }
    }

    fn unit_rows(rows: usize, cols: usize, rng: &mut SeedStream) -> DenseArray {
        DenseArray::matrix(rows, cols, rng.normal_vec(rows * cols))
            .unwrap()
            .l2_normalize_rows()
    }

    fn cst_loss_value(
        student: &DenseArray,
        teacher: &DenseArray,
        tau: f64,
        num_images: usize,
        views: usize,
    ) -> f64 {
        let mut g = Graph::new();
        let s = g.constant(student.clone()).unwrap();
        let l =
            intra_contrastive_loss_expert(&mut g, s, teacher, tau, num_images, views).unwrap();
        g.value(l).scalar_value()
    }

    #[test]
    fn cst_loss_single_image_is_exactly_zero() {
        let mut rng = SeedStream::new(33);
        let x = unit_rows(4, 5, &mut rng); // 1 image, 4 views
        let y = unit_rows(4, 5, &mut rng);
        assert_eq!(cst_loss_value(&x, &y, 0.04, 1, 4), 0.0);
    }

    #[test]
    fn cst_loss_identical_embeddings_is_log_batch() {
        // All embeddings of all images identical: ratio = 1/|B_i|.
        let row: Vec<f64> = alloc::vec![0.6, 0.8, 0.0];
        let mut data = Vec::new();
        for _ in 0..6 {
            data.extend(&row);
        }
        let m = DenseArray::matrix(6, 3, data).unwrap(); // 3 images, 2 views
        let got = cst_loss_value(&m, &m, 0.04, 3, 2);
        assert!((got - math::ln(3.0)).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn cst_loss_orthogonal_images_hand_value() {
        // 2 images with orthogonal embeddings, views identical within each
        // image, tau = 0.04: loss = ln(1 + e^-25).
        let mut data = Vec::new();
        for _ in 0..2 {
            data.extend([1.0, 0.0]);
        }
        for _ in 0..2 {
            data.extend([0.0, 1.0]);
        }
        let m = DenseArray::matrix(4, 2, data).unwrap();
        let got = cst_loss_value(&m, &m, 0.04, 2, 2);
        let expected = math::ln(1.0 + math::exp(-25.0));
        assert!(got >= 0.0);
        assert!((got - expected).abs() < 1e-14, "got {got}, want {expected}");
    }

    #[test]
    fn cst_loss_rejects_bad_preconditions() {
        let mut rng = SeedStream::new(35);
        let x = unit_rows(4, 3, &mut rng);
        let mut g = Graph::new();
        let s = g.constant(x.clone()).unwrap();
        assert!(intra_contrastive_loss_expert(&mut g, s, &x, 0.0, 2, 2).is_err());
        assert!(intra_contrastive_loss_expert(&mut g, s, &x, 0.04, 4, 1).is_err());
    }

    #[test]
    fn cst_loss_invariant_under_common_rotation() {
        let mut rng = SeedStream::new(37);
        let x = unit_rows(6, 4, &mut rng); // 3 images, 2 views
        let y = unit_rows(6, 4, &mut rng);
        // Householder reflection: orthogonal, preserves all inner products.
        let v = unit_rows(1, 4, &mut rng);
        let reflect = |m: &DenseArray| {
            let mut out = m.clone();
            for r in 0..m.rows() {
                let dot: f64 = m.row(r).iter().zip(v.data()).map(|(a, b)| a * b).sum();
                for c in 0..4 {
                    let val = m.at(r, c) - 2.0 * dot * v.data()[c];
                    out.set(r, c, val);
                }
            }
            out
        };
        let base = cst_loss_value(&x, &y, 0.04, 3, 2);
        let rotated = cst_loss_value(&reflect(&x), &reflect(&y), 0.04, 3, 2);
        assert!((base - rotated).abs() < 1e-9);
    }

    #[test]
    fn cst_loss_invariant_under_image_permutation() {
        let mut rng = SeedStream::new(39);
        let x = unit_rows(6, 4, &mut rng);
        let y = unit_rows(6, 4, &mut rng);
        // Swap images 0 and 2 (rows 0-1 and 4-5) in both matrices.
        let permute = |m: &DenseArray| m.gather_rows(&[4, 5, 2, 3, 0, 1]).unwrap();
        let base = cst_loss_value(&x, &y, 0.04, 3, 2);
        let perm = cst_loss_value(&permute(&x), &permute(&y), 0.04, 3, 2);
        assert!((base - perm).abs() < 1e-12);
    }

    #[test]
    fn losses_gradcheck_on_micro_batch() {
        let mut rng = SeedStream::new(41);
        // 2 images, 2 views, N=2 experts.
        let teacher_routing = DenseArray::matrix(4, 2, rng.normal_vec(8))
            .unwrap()
            .softmax_rows(1.0)
            .unwrap();
        let err = grad_check(
            move |g, logits| {
                let probs = g.softmax(logits, 1.0)?;
                routing_consistency_loss(g, probs, &teacher_routing, 2, 2)
            },
            &DenseArray::matrix(4, 2, SeedStream::new(42).normal_vec(8)).unwrap(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "route grad err {err}");

        let teacher_emb = unit_rows(4, 3, &mut rng);
        let err = grad_check(
            move |g, raw| {
                let x = g.l2_normalize_rows(raw)?;
                intra_contrastive_loss_expert(g, x, &teacher_emb, 0.04, 2, 2)
            },
            &DenseArray::matrix(4, 3, SeedStream::new(43).normal_vec(12)).unwrap(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "cst grad err {err}");
    }

    #[test]
    fn aggregate_mean_and_empty_convention() {
        let mut g = Graph::new();
        let a = g.constant(DenseArray::scalar(0.0)).unwrap();
        let b = g.constant(DenseArray::scalar(core::f64::consts::LN_2)).unwrap();
        let out = aggregate_contrastive_loss(&mut g, &[Some(a), Some(b)], 2).unwrap();
        assert!((g.value(out).scalar_value() - core::f64::consts::LN_2 / 2.0).abs() < 1e-15);

        // Empty expert contributes 0, divisor stays N.
        let out = aggregate_contrastive_loss(&mut g, &[Some(b), None, None], 3).unwrap();
        assert!((g.value(out).scalar_value() - core::f64::consts::LN_2 / 3.0).abs() < 1e-15);

        assert!(aggregate_contrastive_loss(&mut g, &[], 0).is_err());
    }

    #[test]
    fn total_loss_addition_and_guards() {
        let t = total_loss(0.0, 0.0).unwrap();
        assert_eq!(t.total, 0.0);
        let t = total_loss(0.6931, 0.5).unwrap();
        assert!((t.total - 1.1931).abs() < 1e-12);
        assert!(total_loss(f64::NAN, 0.0).is_err());
        assert!(total_loss(0.0, f64::INFINITY).is_err());
    }
}
