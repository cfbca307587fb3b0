//! Subcommand implementations. Every command returns a process exit code:
//! 0 only when the invoked suite passed.

use crate::checkpoint;
use crate::gradsuite;
use crate::rundir::RunDir;
use anyhow::{Context, Result};
use midol_core::infodecomp::JointTable;
use midol_core::metrics;
use midol_core::moe::select_expert;
use midol_core::rng::SeedStream;
use midol_core::synthdata::{batch_to_csv, SyntheticBatch};
use midol_core::trainer::{
    default_specs, eval_batch, evaluate_probes, evaluate_routing, run_training, ModelState,
    TrainConfig, TrainOutcome,
};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
struct LossLine {
    step: usize,
    l_route: f64,
    l_cst: f64,
    total: f64,
}

#[derive(Serialize)]
struct EvalLine {
    step: usize,
    purity: f64,
    load_entropy: f64,
    collapse_flag: bool,
    selection_mismatch: f64,
}

/// The metrics stream: per-step loss lines with the periodic routing
/// evaluations interleaved at the step they were taken.
fn metrics_stream(outcome: &TrainOutcome) -> Result<String> {
    let mut out = String::new();
    let mut evals = outcome.evals.iter().peekable();
    for r in &outcome.steps {
        out.push_str(&serde_json::to_string(&LossLine {
            step: r.step,
            l_route: r.l_route,
            l_cst: r.l_cst,
            total: r.total,
        })?);
        out.push('\n');
        while evals.peek().is_some_and(|e| e.step == r.step + 1) {
            let e = evals.next().unwrap();
            out.push_str(&serde_json::to_string(&EvalLine {
                step: e.step,
                purity: e.routing.purity,
                load_entropy: e.routing.load_entropy,
                collapse_flag: e.routing.collapse_flag,
                selection_mismatch: e.selection_mismatch,
            })?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// CSV of routing decisions over the evaluation set: one row per sample
/// with the student's chosen expert and its softmax confidence.
fn routing_csv(state: &ModelState, config: &TrainConfig, eval: &SyntheticBatch) -> Result<String> {
    let feats = state.student.encoder.forward_plain(&eval.raw_matrix())?;
    let probs = state.student.moe.route_plain(&feats)?;
    let mut out = String::from("sample_id,true_modality,selected_expert,max_probability\n");
    for (r, sample) in eval.samples.iter().enumerate() {
        let expert = if config.enable_moe {
            select_expert(probs.row(r))
        } else {
            0
        };
        out.push_str(&format!(
            "{r},{},{expert},{:.16e}\n",
            sample.modality,
            probs.row(r)[expert]
        ));
    }
    Ok(out)
}

fn write_optional_dumps(
    state: &ModelState,
    config: &TrainConfig,
    eval: &SyntheticBatch,
    dump_routing: Option<&Path>,
    dump_data: Option<&Path>,
) -> Result<()> {
    if let Some(path) = dump_routing {
        std::fs::write(path, routing_csv(state, config, eval)?)
            .with_context(|| format!("writing routing dump {}", path.display()))?;
    }
    if let Some(path) = dump_data {
        std::fs::write(path, batch_to_csv(eval))
            .with_context(|| format!("writing data dump {}", path.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct IdentityReport {
    tables: usize,
    max_residual_bivariate: f64,
    max_residual_entropy: f64,
    max_residual_objective: f64,
    xor_error: f64,
    pass: bool,
}

/// Checks the exact information-decomposition identities over seeded
/// random tables plus the XOR interaction-information case.
pub fn cmd_verify_identities(tables: usize, seed: u64) -> Result<i32> {
    let mut rng = SeedStream::new(seed).derive("identities");
    let mut max_biv = 0.0f64;
    let mut max_ent = 0.0f64;
    let mut max_obj = 0.0f64;
    for _ in 0..tables {
        let dims = [
            2 + rng.below(3),
            2 + rng.below(3),
            2 + rng.below(3),
        ];
        let table = JointTable::random(dims, &mut rng);
        let report = midol_core::infodecomp::verify_decomposition(&table)?;
        max_biv = max_biv.max(report.residual_bivariate.abs());
        max_ent = max_ent.max(report.residual_entropy.abs());
        max_obj = max_obj.max(report.residual_objective.abs());
    }
    let xor = midol_core::infodecomp::trivariate_mi(&JointTable::xor())?;
    let xor_error = (xor - (-std::f64::consts::LN_2)).abs();
    let pass = max_biv < 1e-10 && max_ent < 1e-10 && max_obj < 1e-10 && xor_error < 1e-12;
    let report = IdentityReport {
        tables,
        max_residual_bivariate: max_biv,
        max_residual_entropy: max_ent,
        max_residual_objective: max_obj,
        xor_error,
        pass,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct GradReport {
    checks: Vec<gradsuite::GradCheckResult>,
    pass: bool,
}

/// Finite-difference validation of every primitive and both losses.
pub fn cmd_gradcheck(points: usize, seed: u64) -> Result<i32> {
    let checks = gradsuite::run_suite(points, seed);
    let pass = checks.iter().all(|c| c.pass);
    println!("{}", serde_json::to_string_pretty(&GradReport { checks, pass })?);
    Ok(if pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct TrainSummary {
    run_dir: String,
    steps: usize,
    final_total: f64,
    final_purity: f64,
    final_load_entropy: f64,
    final_collapse_flag: bool,
}

/// Runs training and persists the run artifacts.
pub fn cmd_train(
    config: &TrainConfig,
    out_root: &Path,
    dump_routing: Option<&Path>,
    dump_data: Option<&Path>,
) -> Result<i32> {
    let mut run = RunDir::create(out_root, "train", config)?;
    let outcome = run_training(config)?;
    run.write_artifact("metrics.ndjson", &metrics_stream(&outcome)?)?;
    checkpoint::save_state(&outcome.state, &run.path.join("checkpoint"))?;
    run.record_artifact("checkpoint");
    let (geom, _) = default_specs(config)?;
    let eval = eval_batch(config, &geom, &outcome.specs)?;
    write_optional_dumps(&outcome.state, config, &eval, dump_routing, dump_data)?;
    let last = outcome.evals.last().expect("at least one evaluation");
    let summary = TrainSummary {
        run_dir: run.path.display().to_string(),
        steps: outcome.steps.len(),
        final_total: outcome.steps.last().expect("at least one step").total,
        final_purity: last.routing.purity,
        final_load_entropy: last.routing.load_entropy,
        final_collapse_flag: last.routing.collapse_flag,
    };
    run.finalize()?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

#[derive(Serialize)]
pub struct EvaluationReport {
    pub purity: f64,
    pub load_entropy: f64,
    pub collapse_flag: bool,
    pub selection_mismatch: f64,
    pub modality_accuracy: f64,
    pub subcluster_accuracy: f64,
}

fn build_evaluation(
    state: &ModelState,
    config: &TrainConfig,
) -> Result<(EvaluationReport, SyntheticBatch, midol_core::synthdata::DataGeometry)> {
    let (geom, specs) = default_specs(config)?;
    let eval = eval_batch(config, &geom, &specs)?;
    let routing = evaluate_routing(state, config, &eval)?;
    let probes = evaluate_probes(state, config, &geom, &eval)?;
    Ok((
        EvaluationReport {
            purity: routing.routing.purity,
            load_entropy: routing.routing.load_entropy,
            collapse_flag: routing.routing.collapse_flag,
            selection_mismatch: routing.selection_mismatch,
            modality_accuracy: probes.modality_accuracy,
            subcluster_accuracy: probes.subcluster_accuracy,
        },
        eval,
        geom,
    ))
}

/// Teacher-branch embedding exports: encoder features (used by the
/// probes) and projector outputs (used for routing analysis).
fn embedding_exports(
    state: &ModelState,
    config: &TrainConfig,
    eval: &SyntheticBatch,
) -> Result<(String, String)> {
    let raw = eval.raw_matrix();
    let feat_t = state.teacher.encoder.forward_plain(&raw)?;
    let route_t = state.teacher.moe.route_plain(&feat_t)?;
    let modality: Vec<usize> = eval.samples.iter().map(|s| s.modality).collect();
    let subcluster: Vec<usize> = eval.samples.iter().map(|s| s.subcluster).collect();
    let experts: Vec<usize> = (0..eval.len())
        .map(|r| {
            if config.enable_moe {
                select_expert(route_t.row(r))
            } else {
                0
            }
        })
        .collect();
    let encoder_csv = metrics::embeddings_to_csv(&modality, &subcluster, &experts, &feat_t)?;
    let mut projected = midol_core::tensor::DenseArray::zeros(vec![
        eval.len(),
        state.teacher.moe.output_dim(),
    ]);
    for r in 0..eval.len() {
        let one = feat_t.gather_rows(&[r])?;
        let emb = state.teacher.moe.expert_forward_plain(&one, experts[r])?;
        for c in 0..emb.cols() {
            projected.set(r, c, emb.at(0, c));
        }
    }
    let projected_csv = metrics::embeddings_to_csv(&modality, &subcluster, &experts, &projected)?;
    Ok((encoder_csv, projected_csv))
}

/// Loads a checkpoint and reports routing and probe metrics on the
/// held-out evaluation set.
pub fn cmd_evaluate(
    config: &TrainConfig,
    checkpoint_path: &Path,
    out_root: &Path,
    dump_routing: Option<&Path>,
    dump_data: Option<&Path>,
) -> Result<i32> {
    let state = checkpoint::load_state(checkpoint_path)?;
    let mut run = RunDir::create(out_root, "evaluate", config)?;
    let (report, eval, _) = build_evaluation(&state, config)?;
    let (encoder_csv, projected_csv) = embedding_exports(&state, config, &eval)?;
    run.write_artifact("report.json", &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    run.write_artifact("embeddings_encoder.csv", &encoder_csv)?;
    run.write_artifact("embeddings_projected.csv", &projected_csv)?;
    write_optional_dumps(&state, config, &eval, dump_routing, dump_data)?;
    run.finalize()?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

#[derive(Serialize)]
struct AblationRow {
    row: usize,
    enable_moe: bool,
    enable_route: bool,
    enable_cst: bool,
    run_dir: String,
    purity: f64,
    load_entropy: f64,
    collapse_flag: bool,
    collapse_any_eval: bool,
    modality_accuracy: f64,
    subcluster_accuracy: f64,
    mean_total_first_tenth: f64,
    mean_total_last_tenth: f64,
}

/// The ablation grid in presentation order: baseline, +MoE, +routing
/// consistency, +intra-modality contrastive.
pub const ABLATION_ROWS: [(bool, bool, bool); 4] = [
    (false, false, false),
    (true, false, false),
    (true, true, false),
    (true, true, true),
];

/// Runs the four flag combinations with a shared seed and writes a
/// comparison report.
pub fn cmd_ablate(base: &TrainConfig, out_root: &Path) -> Result<i32> {
    let mut run = RunDir::create(out_root, "ablate", base)?;
    let mut rows = Vec::new();
    for (i, &(moe, route, cst)) in ABLATION_ROWS.iter().enumerate() {
        let config = TrainConfig {
            enable_moe: moe,
            enable_route: route,
            enable_cst: cst,
            ..base.clone()
        };
        let mut row_run = RunDir::create(&run.path, &format!("row{}", i + 1), &config)?;
        let outcome = run_training(&config)?;
        row_run.write_artifact("metrics.ndjson", &metrics_stream(&outcome)?)?;
        checkpoint::save_state(&outcome.state, &row_run.path.join("checkpoint"))?;
        row_run.record_artifact("checkpoint");
        let (report, _, _) = build_evaluation(&outcome.state, &config)?;
        let n = outcome.steps.len();
        let tenth = (n / 10).max(1);
        let mean = |s: &[midol_core::trainer::StepRecord]| {
            s.iter().map(|r| r.total).sum::<f64>() / s.len() as f64
        };
        rows.push(AblationRow {
            row: i + 1,
            enable_moe: moe,
            enable_route: route,
            enable_cst: cst,
            run_dir: row_run.path.display().to_string(),
            purity: report.purity,
            load_entropy: report.load_entropy,
            collapse_flag: report.collapse_flag,
            collapse_any_eval: outcome.evals.iter().any(|e| e.routing.collapse_flag),
            modality_accuracy: report.modality_accuracy,
            subcluster_accuracy: report.subcluster_accuracy,
            mean_total_first_tenth: mean(&outcome.steps[..tenth]),
            mean_total_last_tenth: mean(&outcome.steps[n - tenth..]),
        });
        row_run.finalize()?;
    }
    let comparison = serde_json::to_string_pretty(&rows)?;
    run.write_artifact("comparison.json", &format!("{comparison}\n"))?;
    run.finalize()?;
    println!("{comparison}");
    Ok(0)
}

/// Shared helper for tests: locate a file under a run root.
pub fn find_run_file(root: &Path, name: &str) -> Option<PathBuf> {
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).ok()?;
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|f| f == name) {
                return Some(p);
            }
        }
    }
    None
}
