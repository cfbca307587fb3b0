//! Checkpoint files: named arrays with shape headers in JSON, versioned
//! by the leading magic string "MIDOL1".

use anyhow::{bail, Context, Result};
use midol_core::encoder::MlpParams;
use midol_core::moe::{ExpertFfn, MoeParams};
use midol_core::tensor::DenseArray;
use midol_core::trainer::{BranchParams, ModelState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const MAGIC: &str = "MIDOL1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    step: usize,
    num_experts: usize,
    /// BTreeMap keeps key order stable so identical states serialize to
    /// identical bytes.
    arrays: BTreeMap<String, NamedArray>,
}

fn tensor_names(num_experts: usize) -> Vec<String> {
    let mut names = Vec::new();
    for branch in ["student", "teacher"] {
        for t in ["encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2"] {
            names.push(format!("{branch}.{t}"));
        }
        names.push(format!("{branch}.moe.router"));
        for e in 0..num_experts {
            for t in ["w1", "b1", "w2", "b2"] {
                names.push(format!("{branch}.moe.expert{e}.{t}"));
            }
        }
        names.push(format!("{branch}.moe.proj_w"));
        names.push(format!("{branch}.moe.proj_b"));
    }
    names
}

fn moment_names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}.{i:03}")).collect()
}

fn to_named(t: &DenseArray) -> NamedArray {
    NamedArray {
        shape: t.shape().to_vec(),
        data: t.data().to_vec(),
    }
}

fn from_named(name: &str, a: &NamedArray) -> Result<DenseArray> {
    DenseArray::new(a.shape.clone(), a.data.clone())
        .map_err(|e| anyhow::anyhow!("checkpoint array '{name}': {e}"))
}

/// Writes the full model state (both branches, optimizer moments, step).
pub fn save_state(state: &ModelState, path: &Path) -> Result<()> {
    let num_experts = state.student.moe.num_experts();
    let names = tensor_names(num_experts);
    let tensors: Vec<&DenseArray> = state
        .student
        .tensors()
        .into_iter()
        .chain(state.teacher.tensors())
        .collect();
    if names.len() != tensors.len() {
        bail!("checkpoint name/tensor count mismatch");
    }
    let mut arrays = BTreeMap::new();
    for (name, t) in names.iter().zip(&tensors) {
        arrays.insert(name.clone(), to_named(t));
    }
    for (name, t) in moment_names("moment1", state.moment1.len())
        .iter()
        .zip(&state.moment1)
    {
        arrays.insert(name.clone(), to_named(t));
    }
    for (name, t) in moment_names("moment2", state.moment2.len())
        .iter()
        .zip(&state.moment2)
    {
        arrays.insert(name.clone(), to_named(t));
    }
    let doc = CheckpointDoc {
        step: state.step,
        num_experts,
        arrays,
    };
    let body = serde_json::to_string(&doc)?;
    std::fs::write(path, format!("{MAGIC}\n{body}\n"))
        .with_context(|| format!("writing checkpoint {}", path.display()))?;
    Ok(())
}

fn take<'a>(doc: &'a CheckpointDoc, name: &str) -> Result<&'a NamedArray> {
    doc.arrays
        .get(name)
        .ok_or_else(|| anyhow::anyhow!("checkpoint missing array '{name}'"))
}

fn load_branch(doc: &CheckpointDoc, branch: &str) -> Result<BranchParams> {
    let g = |t: &str| -> Result<DenseArray> {
        let name = format!("{branch}.{t}");
        from_named(&name, take(doc, &name)?)
    };
    let encoder = MlpParams {
        w1: g("encoder.w1")?,
        b1: g("encoder.b1")?,
        w2: g("encoder.w2")?,
        b2: g("encoder.b2")?,
    };
    let mut experts = Vec::with_capacity(doc.num_experts);
    for e in 0..doc.num_experts {
        experts.push(ExpertFfn {
            w1: g(&format!("moe.expert{e}.w1"))?,
            b1: g(&format!("moe.expert{e}.b1"))?,
            w2: g(&format!("moe.expert{e}.w2"))?,
            b2: g(&format!("moe.expert{e}.b2"))?,
        });
    }
    let moe = MoeParams {
        router: g("moe.router")?,
        experts,
        proj_w: g("moe.proj_w")?,
        proj_b: g("moe.proj_b")?,
    };
    Ok(BranchParams { encoder, moe })
}

/// Reads a checkpoint back into a full model state.
pub fn load_state(path: &Path) -> Result<ModelState> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let Some((magic, body)) = text.split_once('\n') else {
        bail!("checkpoint {}: missing magic line", path.display());
    };
    if magic != MAGIC {
        bail!(
            "checkpoint {}: bad magic '{magic}', expected '{MAGIC}'",
            path.display()
        );
    }
    let doc: CheckpointDoc = serde_json::from_str(body.trim_end())
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    let student = load_branch(&doc, "student")?;
    let teacher = load_branch(&doc, "teacher")?;
    let count = student.tensors().len();
    let mut moment1 = Vec::with_capacity(count);
    let mut moment2 = Vec::with_capacity(count);
    for name in moment_names("moment1", count) {
        moment1.push(from_named(&name, take(&doc, &name)?)?);
    }
    for name in moment_names("moment2", count) {
        moment2.push(from_named(&name, take(&doc, &name)?)?);
    }
    Ok(ModelState {
        student,
        teacher,
        moment1,
        moment2,
        step: doc.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use midol_core::synthdata::DataGeometry;
    use midol_core::trainer::TrainConfig;

    #[test]
    fn checkpoint_round_trips_exactly() {
        let config = TrainConfig::default();
        let mut state = ModelState::init(&config, &DataGeometry::default()).unwrap();
        state.step = 17;
        state.moment1[0].data_mut()[0] = 0.125;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_state(&state, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("MIDOL1\n"));
        let loaded = load_state(&path).unwrap();
        assert_eq!(loaded.step, 17);
        for (a, b) in state.student.tensors().iter().zip(loaded.student.tensors()) {
            assert_eq!(*a, b);
        }
        for (a, b) in state.teacher.tensors().iter().zip(loaded.teacher.tensors()) {
            assert_eq!(*a, b);
        }
        assert_eq!(state.moment1, loaded.moment1);
        assert_eq!(state.moment2, loaded.moment2);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        std::fs::write(&path, "NOTMAGIC\n{}\n").unwrap();
        let err = load_state(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
    }
}
