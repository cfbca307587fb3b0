//! Siamese training loop: teacher forward (detached, Sinkhorn-routed),
//! student forward (softmax-routed, differentiable), losses per ablation
//! flags, backward through the student only, AdamW update, EMA teacher
//! update on a cosine momentum schedule.

use crate::encoder::{self, MlpParams, MomentumSchedule};
use crate::error::{Error, Result};
use crate::losses::{
    aggregate_contrastive_loss, intra_contrastive_loss_expert, routing_consistency_loss,
    total_loss, LossBreakdown,
};
use crate::math;
use crate::metrics::{routing_report, RoutingReport};
use crate::moe::{expert_forward, route_student, route_teacher, select_expert, MoeNodes, MoeParams};
use crate::rng::SeedStream;
use crate::synthdata::{make_specs, sample_batch, DataGeometry, ModalitySpec, SyntheticBatch};
use crate::tensor::{DenseArray, Graph};
use alloc::format;
use alloc::vec::Vec;

pub const ADAM_EPSILON: f64 = 1e-8;
pub const GRAD_CLIP_NORM: f64 = 5.0;
pub const EVAL_EVERY: usize = 100;
pub const EVAL_SAMPLES: usize = 600;

/// Full training configuration; `Default` is the desk-scale setup.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub ema_lambda0: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_epsilon: f64,
    pub temperature: f64,
    pub seed: u64,
    pub num_experts: usize,
    pub enable_moe: bool,
    pub enable_route: bool,
    pub enable_cst: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 60,
            learning_rate: 1e-4,
            weight_decay: 0.04,
            beta1: 0.9,
            beta2: 0.95,
            ema_lambda0: 0.996,
            sinkhorn_iters: 3,
            sinkhorn_epsilon: 0.05,
            temperature: 0.04,
            seed: 0,
            num_experts: 3,
            enable_moe: true,
            enable_route: true,
            enable_cst: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, geom: &DataGeometry) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Invalid("steps must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Domain(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.num_experts < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 experts, got {}",
                self.num_experts
            )));
        }
        if self.batch == 0 || self.batch % geom.modalities != 0 {
            return Err(Error::Invalid(format!(
                "batch {} not divisible by {} modalities",
                self.batch, geom.modalities
            )));
        }
        if self.batch * geom.views < self.num_experts {
            return Err(Error::Invalid(format!(
                "batch x views {} smaller than expert count {}",
                self.batch * geom.views,
                self.num_experts
            )));
        }
        Ok(())
    }
}

/// Encoder plus projector parameters of one branch.
#[derive(Debug, Clone)]
pub struct BranchParams {
    pub encoder: MlpParams,
    pub moe: MoeParams,
}

impl BranchParams {
    pub fn tensors(&self) -> Vec<&DenseArray> {
        let mut t = self.encoder.tensors();
        t.extend(self.moe.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseArray> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.moe.tensors_mut());
        t
    }
}

/// Student, teacher, and optimizer state.
///
/// The teacher never carries gradient or moment state; it only receives
/// EMA copies of the student.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub student: BranchParams,
    pub teacher: BranchParams,
    pub moment1: Vec<DenseArray>,
    pub moment2: Vec<DenseArray>,
    pub step: usize,
}

impl ModelState {
    pub fn init(config: &TrainConfig, geom: &DataGeometry) -> Result<Self> {
        let root = SeedStream::new(config.seed).derive("init");
        let encoder = MlpParams::init(
            geom.input_dim,
            encoder::DEFAULT_HIDDEN_DIM,
            encoder::DEFAULT_EMBED_DIM,
            &mut root.derive("encoder"),
        );
        let moe = MoeParams::init(
            encoder::DEFAULT_EMBED_DIM,
            crate::moe::DEFAULT_EXPERT_HIDDEN,
            crate::moe::DEFAULT_OUTPUT_DIM,
            config.num_experts,
            &mut root.derive("moe"),
        )?;
        let student = BranchParams { encoder, moe };
        let teacher = student.clone();
        let moments: Vec<DenseArray> = student
            .tensors()
            .iter()
            .map(|t| DenseArray::zeros(t.shape().to_vec()))
            .collect();
        Ok(ModelState {
            student,
            teacher,
            moment1: moments.clone(),
            moment2: moments,
            step: 0,
        })
    }
}

/// Bias-corrected AdamW with decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + 1e-8) + wd * p).
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    param: &mut DenseArray,
    grad: &DenseArray,
    moment1: &mut DenseArray,
    moment2: &mut DenseArray,
    lr: f64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    step: usize,
) -> Result<()> {
    if param.shape() != grad.shape()
        || param.shape() != moment1.shape()
        || param.shape() != moment2.shape()
    {
        return Err(Error::ShapeMismatch(format!(
            "adamw shapes: param {:?}, grad {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    if step == 0 {
        return Err(Error::Invalid("adamw step counter starts at 1".into()));
    }
    let bc1 = 1.0 - math::powi(beta1, step as i32);
    let bc2 = 1.0 - math::powi(beta2, step as i32);
    for i in 0..param.len() {
        let g = grad.data()[i];
        let m = beta1 * moment1.data()[i] + (1.0 - beta1) * g;
        let v = beta2 * moment2.data()[i] + (1.0 - beta2) * g * g;
        moment1.data_mut()[i] = m;
        moment2.data_mut()[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        let p = param.data()[i];
        param.data_mut()[i] = p - lr * (m_hat / (math::sqrt(v_hat) + ADAM_EPSILON) + weight_decay * p);
    }
    Ok(())
}

/// Scales all gradients by `max_norm / norm` when the global L2 norm
/// exceeds `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [DenseArray], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for &v in g.data() {
            sq += v * v;
        }
    }
    let norm = math::sqrt(sq);
    if norm > max_norm {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= f;
            }
        }
    }
    norm
}

/// Per-image expert choice: argmax of the routing rows summed over the
/// image's views, lowest index on ties.
fn image_selection(routing: &DenseArray, num_images: usize, views: usize) -> Vec<usize> {
    let n = routing.cols();
    let mut sel = Vec::with_capacity(num_images);
    for b in 0..num_images {
        let mut acc = alloc::vec![0.0; n];
        for j in 0..views {
            for (i, a) in acc.iter_mut().enumerate() {
                *a += routing.at(b * views + j, i);
            }
        }
        sel.push(select_expert(&acc));
    }
    sel
}

/// One optimizer step; returns the loss breakdown that was backpropagated.
pub fn train_step(
    state: &mut ModelState,
    batch: &SyntheticBatch,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let num_images = batch.len();
    let views = batch.views;
    let input = batch.views_matrix();

    // Teacher branch: plain arrays, never part of the gradient graph.
    let feat_t = state.teacher.encoder.forward_plain(&input)?;
    let mut g = Graph::new();
    let (feat_s, enc_nodes) = encoder::mlp_forward(&mut g, &state.student.encoder, &input, true)?;
    let enc_nodes = enc_nodes.expect("differentiable forward returns nodes");

    let mut l_route_node = None;
    let mut l_cst_node = None;

    let moe_nodes = if config.enable_moe {
        let nodes = MoeNodes::insert(&mut g, &state.student.moe)?;
        let teacher_routing = route_teacher(
            &state.teacher.moe,
            &feat_t,
            config.sinkhorn_epsilon,
            config.sinkhorn_iters,
        )?;
        let a_s = route_student(&mut g, &nodes, feat_s)?;
        let student_sel = image_selection(g.value(a_s), num_images, views);
        let teacher_sel = image_selection(&teacher_routing.scores, num_images, views);

        if config.enable_route {
            l_route_node = Some(routing_consistency_loss(
                &mut g,
                a_s,
                &teacher_routing.scores,
                num_images,
                views,
            )?);
        }
        if config.enable_cst {
            // Teacher embeddings per image through its own selected expert.
            let mut teacher_emb = Vec::with_capacity(num_images);
            for b in 0..num_images {
                let rows: Vec<usize> = (b * views..(b + 1) * views).collect();
                let f = feat_t.gather_rows(&rows)?;
                teacher_emb.push(state.teacher.moe.expert_forward_plain(&f, teacher_sel[b])?);
            }
            let mut terms = Vec::with_capacity(config.num_experts);
            for expert in 0..config.num_experts {
                let images: Vec<usize> = (0..num_images)
                    .filter(|&b| student_sel[b] == expert)
                    .collect();
                if images.is_empty() {
                    terms.push(None);
                    continue;
                }
                let row_idx: Vec<usize> = images
                    .iter()
                    .flat_map(|&b| b * views..(b + 1) * views)
                    .collect();
                let feat_sub = g.gather_rows(feat_s, row_idx)?;
                let x = expert_forward(&mut g, &nodes, feat_sub, expert)?;
                let out_dim = state.teacher.moe.output_dim();
                let mut y_data = Vec::with_capacity(images.len() * views * out_dim);
                for &b in &images {
                    y_data.extend(teacher_emb[b].data().iter().copied());
                }
                let y = DenseArray::matrix(images.len() * views, out_dim, y_data)?;
                terms.push(Some(intra_contrastive_loss_expert(
                    &mut g,
                    x,
                    &y,
                    config.temperature,
                    images.len(),
                    views,
                )?));
            }
            l_cst_node = Some(aggregate_contrastive_loss(&mut g, &terms, config.num_experts)?);
        }
        Some(nodes)
    } else {
        // Baseline: one shared head, contrastive over the whole batch.
        let nodes = MoeNodes::insert(&mut g, &state.student.moe)?;
        let x = expert_forward(&mut g, &nodes, feat_s, 0)?;
        let y = state.teacher.moe.expert_forward_plain(&feat_t, 0)?;
        l_cst_node = Some(intra_contrastive_loss_expert(
            &mut g,
            x,
            &y,
            config.temperature,
            num_images,
            views,
        )?);
        Some(nodes)
    };
    let moe_nodes = moe_nodes.expect("projector nodes always inserted");

    let l_route_val = l_route_node.map_or(0.0, |n| g.value(n).scalar_value());
    let l_cst_val = l_cst_node.map_or(0.0, |n| g.value(n).scalar_value());
    let breakdown = total_loss(l_route_val, l_cst_val)?;

    let objective = match (l_route_node, l_cst_node) {
        (Some(a), Some(b)) => Some(g.add(a, b)?),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    };

    // An empty objective means an exactly zero gradient: skip the
    // optimizer update entirely so parameters stay untouched.
    if let Some(root) = objective {
        g.backward(root)?;
        let mut leaf_ids: Vec<crate::tensor::NodeId> = enc_nodes.ids().to_vec();
        leaf_ids.extend(moe_nodes.ids());
        let mut grads: Vec<DenseArray> = leaf_ids.iter().map(|&id| g.grad(id).clone()).collect();
        clip_global_norm(&mut grads, GRAD_CLIP_NORM);
        let step = state.step + 1;
        let lr = config.learning_rate;
        let (b1, b2, wd) = (config.beta1, config.beta2, config.weight_decay);
        let mut params = state.student.tensors_mut();
        if params.len() != grads.len() {
            return Err(Error::Invalid(format!(
                "parameter/gradient count mismatch: {} vs {}",
                params.len(),
                grads.len()
            )));
        }
        for (i, p) in params.iter_mut().enumerate() {
            adamw_update(
                p,
                &grads[i],
                &mut state.moment1[i],
                &mut state.moment2[i],
                lr,
                b1,
                b2,
                wd,
                step,
            )?;
        }
        for p in state.student.tensors() {
            if !p.all_finite() {
                return Err(Error::NonFinite("student parameter after update".into()));
            }
        }
    }

    let schedule = MomentumSchedule::new(config.ema_lambda0, config.steps as u64)?;
    let lambda = schedule.momentum_at((state.step as u64).min(config.steps as u64))?;
    encoder::ema_update(&mut state.teacher.encoder, &state.student.encoder, lambda)?;
    state.teacher.moe.ema_update_from(&state.student.moe, lambda)?;
    state.step += 1;
    Ok(breakdown)
}

/// Per-step loss record; `total` is always `l_route + l_cst` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub l_route: f64,
    pub l_cst: f64,
    pub total: f64,
}

/// Periodic routing diagnostics on a held-out evaluation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub routing: RoutingReport,
    /// Fraction of evaluation samples where student and teacher routers
    /// pick different experts.
    pub selection_mismatch: f64,
}

/// Final state plus the full metrics stream of a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub specs: Vec<ModalitySpec>,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

/// The data geometry and modality specs a config trains on.
pub fn default_specs(config: &TrainConfig) -> Result<(DataGeometry, Vec<ModalitySpec>)> {
    let geom = DataGeometry::default();
    let specs = make_specs(
        &geom,
        SeedStream::new(config.seed).derive("geometry").next_u64(),
    )?;
    Ok((geom, specs))
}

/// Linear probes on the teacher encoder's embeddings of the evaluation
/// set: modality label and combined (modality, sub-cluster) label, 70/30
/// deterministic split.
pub fn evaluate_probes(
    state: &ModelState,
    config: &TrainConfig,
    geom: &DataGeometry,
    eval: &SyntheticBatch,
) -> Result<crate::metrics::ProbeReport> {
    let raw = eval.raw_matrix();
    let feat_t = state.teacher.encoder.forward_plain(&raw)?;
    let modality: Vec<usize> = eval.samples.iter().map(|s| s.modality).collect();
    let subcluster: Vec<usize> = eval
        .samples
        .iter()
        .map(|s| s.modality * geom.subclusters + s.subcluster)
        .collect();
    let probe_seed = SeedStream::new(config.seed).derive("probe").next_u64();
    Ok(crate::metrics::ProbeReport {
        modality_accuracy: crate::metrics::probe_with_split(&feat_t, &modality, 0.7, probe_seed)?,
        subcluster_accuracy: crate::metrics::probe_with_split(
            &feat_t,
            &subcluster,
            0.7,
            probe_seed,
        )?,
    })
}

/// The held-out evaluation set for a config: raw samples with labels.
pub fn eval_batch(config: &TrainConfig, geom: &DataGeometry, specs: &[ModalitySpec]) -> Result<SyntheticBatch> {
    let seed = SeedStream::new(config.seed).derive("eval-data").next_u64();
    let samples = EVAL_SAMPLES - EVAL_SAMPLES % geom.modalities;
    sample_batch(specs, geom, samples, seed)
}

/// Routing diagnostics of the student router over raw evaluation samples.
pub fn evaluate_routing(
    state: &ModelState,
    config: &TrainConfig,
    eval: &SyntheticBatch,
) -> Result<EvalRecord> {
    let raw = eval.raw_matrix();
    let feat_s = state.student.encoder.forward_plain(&raw)?;
    let feat_t = state.teacher.encoder.forward_plain(&raw)?;
    let route_s = state.student.moe.route_plain(&feat_s)?;
    let route_t = state.teacher.moe.route_plain(&feat_t)?;
    let mut assignments = Vec::with_capacity(eval.len());
    let mut mismatched = 0usize;
    for (r, sample) in eval.samples.iter().enumerate() {
        let (es, et) = if config.enable_moe {
            (select_expert(route_s.row(r)), select_expert(route_t.row(r)))
        } else {
            (0, 0)
        };
        if es != et {
            mismatched += 1;
        }
        assignments.push((sample.modality, es));
    }
    Ok(EvalRecord {
        step: state.step,
        routing: routing_report(&assignments, config.num_experts)?,
        selection_mismatch: mismatched as f64 / eval.len() as f64,
    })
}

/// Runs the configured number of steps, recording per-step losses and a
/// routing evaluation every 100 steps plus at the end.
pub fn run_training(config: &TrainConfig) -> Result<TrainOutcome> {
    let geom = DataGeometry::default();
    config.validate(&geom)?;
    let specs = make_specs(&geom, SeedStream::new(config.seed).derive("geometry").next_u64())?;
    let mut state = ModelState::init(config, &geom)?;
    let eval = eval_batch(config, &geom, &specs)?;
    let batch_seeds = SeedStream::new(config.seed).derive("batches");
    let mut steps = Vec::with_capacity(config.steps);
    let mut evals = Vec::new();
    for s in 0..config.steps {
        let batch = sample_batch(
            &specs,
            &geom,
            config.batch,
            batch_seeds.derive_u64(s as u64).next_u64(),
        )?;
        let loss = train_step(&mut state, &batch, config)?;
        steps.push(StepRecord {
            step: s,
            l_route: loss.l_route,
            l_cst: loss.l_cst,
            total: loss.total,
        });
        if (s + 1) % EVAL_EVERY == 0 || s + 1 == config.steps {
            evals.push(evaluate_routing(&state, config, &eval)?);
        }
    }
    Ok(TrainOutcome {
        state,
        specs,
        steps,
        evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            steps: 2,
            batch: 6,
            ..TrainConfig::default()
        }
    }

    fn tiny_batch(config: &TrainConfig, seed: u64) -> (DataGeometry, SyntheticBatch) {
        let geom = DataGeometry::default();
        let specs = make_specs(&geom, 1).unwrap();
        let batch = sample_batch(&specs, &geom, config.batch, seed).unwrap();
        (geom, batch)
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let geom = DataGeometry::default();
        assert!(TrainConfig::default().validate(&geom).is_ok());
        assert!(TrainConfig { steps: 0, ..TrainConfig::default() }.validate(&geom).is_err());
        assert!(
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }
                .validate(&geom)
                .is_err()
        );
        assert!(TrainConfig { batch: 61, ..TrainConfig::default() }.validate(&geom).is_err());
        assert!(
            TrainConfig { num_experts: 1, ..TrainConfig::default() }
                .validate(&geom)
                .is_err()
        );
    }

    #[test]
    fn adamw_zero_gradient_zero_decay_is_identity() {
        let mut p = DenseArray::matrix(2, 2, alloc::vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let before = p.clone();
        let g = DenseArray::zeros(alloc::vec![2, 2]);
        let mut m = DenseArray::zeros(alloc::vec![2, 2]);
        let mut v = DenseArray::zeros(alloc::vec![2, 2]);
        adamw_update(&mut p, &g, &mut m, &mut v, 1e-2, 0.9, 0.95, 0.0, 1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adamw_first_step_matches_closed_form() {
        // Constant gradient, step 1: m_hat = g, v_hat = g^2, so the update
        // is -lr * (g / (|g| + eps) + wd * p).
        let lr = 1e-3;
        let wd = 0.04;
        let mut p = DenseArray::matrix(1, 3, alloc::vec![0.5, -1.0, 2.0]).unwrap();
        let g = DenseArray::matrix(1, 3, alloc::vec![2.0, -3.0, 0.5]).unwrap();
        let mut m = DenseArray::zeros(alloc::vec![1, 3]);
        let mut v = DenseArray::zeros(alloc::vec![1, 3]);
        adamw_update(&mut p, &g, &mut m, &mut v, lr, 0.9, 0.95, wd, 1).unwrap();
        for i in 0..3 {
            let (p0, gi) = ([0.5, -1.0, 2.0][i], g.data()[i]);
            let want = p0 - lr * (gi / (gi.abs() + ADAM_EPSILON) + wd * p0);
            assert!((p.data()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn adamw_matches_scalar_loop_oracle() {
        let mut rng = SeedStream::new(71);
        let (b1, b2, lr, wd) = (0.9, 0.95, 3e-4, 0.04);
        let mut p = DenseArray::matrix(4, 5, rng.normal_vec(20)).unwrap();
        let mut m = DenseArray::zeros(alloc::vec![4, 5]);
        let mut v = DenseArray::zeros(alloc::vec![4, 5]);
        // Independent elementwise oracle state.
        let mut op: Vec<f64> = p.data().to_vec();
        let mut om = alloc::vec![0.0; 20];
        let mut ov = alloc::vec![0.0; 20];
        for step in 1..=7usize {
            let g = DenseArray::matrix(4, 5, rng.normal_vec(20)).unwrap();
            adamw_update(&mut p, &g, &mut m, &mut v, lr, b1, b2, wd, step).unwrap();
            for i in 0..20 {
                om[i] = b1 * om[i] + (1.0 - b1) * g.data()[i];
                ov[i] = b2 * ov[i] + (1.0 - b2) * g.data()[i] * g.data()[i];
                let mh = om[i] / (1.0 - b1.powi(step as i32));
                let vh = ov[i] / (1.0 - b2.powi(step as i32));
                op[i] -= lr * (mh / (vh.sqrt() + ADAM_EPSILON) + wd * op[i]);
            }
        }
        let max_diff = p
            .data()
            .iter()
            .zip(&op)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn clip_leaves_small_gradients_alone_and_scales_large_ones() {
        let mut grads = alloc::vec![DenseArray::matrix(1, 2, alloc::vec![3.0, 4.0]).unwrap()];
        let norm = clip_global_norm(&mut grads, 10.0);
        assert_eq!(norm, 5.0);
        assert_eq!(grads[0].data(), &[3.0, 4.0]);
        let norm = clip_global_norm(&mut grads, 1.0);
        assert_eq!(norm, 5.0);
        assert!((grads[0].data()[0] - 0.6).abs() < 1e-15);
        assert!((grads[0].data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn empty_objective_leaves_student_untouched() {
        let config = TrainConfig {
            enable_route: false,
            enable_cst: false,
            ..tiny_config()
        };
        let geom = DataGeometry::default();
        let mut state = ModelState::init(&config, &geom).unwrap();
        let before: Vec<DenseArray> = state.student.tensors().iter().map(|t| (*t).clone()).collect();
        let (_, batch) = tiny_batch(&config, 9);
        let loss = train_step(&mut state, &batch, &config).unwrap();
        assert_eq!(loss.total, 0.0);
        for (now, was) in state.student.tensors().iter().zip(&before) {
            assert_eq!(*now, was);
        }
    }

    #[test]
    fn teacher_drifts_toward_student_under_ema_only() {
        let config = tiny_config();
        let geom = DataGeometry::default();
        let mut state = ModelState::init(&config, &geom).unwrap();
        // Separate the branches so the EMA pull is visible.
        for t in state.teacher.tensors_mut() {
            for v in t.data_mut() {
                *v += 1.0;
            }
        }
        let zero_lr = TrainConfig {
            enable_route: false,
            enable_cst: false,
            ..config
        };
        let (_, batch) = tiny_batch(&zero_lr, 9);
        let gap_before: f64 = state
            .teacher
            .tensors()
            .iter()
            .zip(state.student.tensors())
            .flat_map(|(t, s)| t.data().iter().zip(s.data()).map(|(a, b)| (a - b).abs()))
            .sum();
        train_step(&mut state, &batch, &zero_lr).unwrap();
        let gap_after: f64 = state
            .teacher
            .tensors()
            .iter()
            .zip(state.student.tensors())
            .flat_map(|(t, s)| t.data().iter().zip(s.data()).map(|(a, b)| (a - b).abs()))
            .sum();
        assert!(gap_after < gap_before);
        assert!(gap_after > 0.0);
    }

    #[test]
    fn two_step_run_replays_bit_identically() {
        let config = tiny_config();
        let a = run_training(&config).unwrap();
        let b = run_training(&config).unwrap();
        assert_eq!(a.steps, b.steps);
        for (x, y) in a.state.student.tensors().iter().zip(b.state.student.tensors()) {
            assert_eq!(*x, y);
        }
        let c = run_training(&TrainConfig { seed: 1, ..config }).unwrap();
        assert_ne!(a.steps, c.steps);
    }

    #[test]
    fn single_step_run_emits_one_record_and_final_eval() {
        let config = TrainConfig { steps: 1, batch: 6, ..TrainConfig::default() };
        let out = run_training(&config).unwrap();
        assert_eq!(out.steps.len(), 1);
        assert_eq!(out.evals.len(), 1);
        assert_eq!(out.evals[0].step, 1);
    }

    #[test]
    fn losses_stay_finite_and_additive_over_a_short_run() {
        let config = TrainConfig { steps: 5, batch: 12, ..TrainConfig::default() };
        let out = run_training(&config).unwrap();
        for r in &out.steps {
            assert!(r.total.is_finite());
            assert!(r.l_route >= 0.0);
            assert_eq!(r.total, r.l_route + r.l_cst);
        }
        for p in out.state.student.tensors() {
            assert!(p.all_finite());
        }
    }

    #[test]
    fn teacher_receives_no_gradient_in_a_full_step() {
        // The teacher is updated only by EMA: with lambda at schedule start
        // (0.996) and an identical init, any teacher change must mirror the
        // student's update scaled by (1 - lambda).
        let config = TrainConfig { steps: 4, batch: 6, ..TrainConfig::default() };
        let geom = DataGeometry::default();
        let mut state = ModelState::init(&config, &geom).unwrap();
        let student_before: Vec<DenseArray> =
            state.student.tensors().iter().map(|t| (*t).clone()).collect();
        let (_, batch) = tiny_batch(&config, 3);
        train_step(&mut state, &batch, &config).unwrap();
        let lambda = MomentumSchedule::new(config.ema_lambda0, 4).unwrap().momentum_at(0).unwrap();
        for ((t, s), was) in state
            .teacher
            .tensors()
            .iter()
            .zip(state.student.tensors())
            .zip(&student_before)
        {
            for ((tv, sv), wv) in t.data().iter().zip(s.data()).zip(was.data()) {
                let want = lambda * wv + (1.0 - lambda) * sv;
                assert!((tv - want).abs() < 1e-12);
            }
        }
    }
}
