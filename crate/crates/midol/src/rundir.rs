//! Run directories: `runs/<timestamp>-<subcommand>/` holding a manifest,
//! the metrics stream, the checkpoint, and any CSV exports.

use crate::config::ConfigSnapshot;
use anyhow::{Context, Result};
use midol_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Everything needed to reproduce a run bit-identically: config, seed,
/// and version, plus bookkeeping for the produced artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub config: ConfigSnapshot,
    pub started_at_unix: u64,
    pub finished_at_unix: Option<u64>,
    pub artifacts: Vec<String>,
}

/// A created run directory with its in-progress manifest.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    manifest: RunManifest,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunDir {
    /// Creates `<root>/<timestamp>-<subcommand>` (suffixing on collision)
    /// and writes the initial manifest.
    pub fn create(root: &Path, subcommand: &str, config: &TrainConfig) -> Result<RunDir> {
        let stamp = now_unix();
        let mut path = root.join(format!("{stamp}-{subcommand}"));
        let mut counter = 2;
        while path.exists() {
            path = root.join(format!("{stamp}-{subcommand}-{counter}"));
            counter += 1;
        }
        std::fs::create_dir_all(&path)
            .with_context(|| format!("creating run directory {}", path.display()))?;
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: ConfigSnapshot::from(config),
            started_at_unix: stamp,
            finished_at_unix: None,
            artifacts: Vec::new(),
        };
        let run = RunDir { path, manifest };
        run.write_manifest()?;
        Ok(run)
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.path.join("manifest.json");
        let body = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, format!("{body}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Writes a file into the run directory and records it as an artifact.
    pub fn write_artifact(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path.join(name);
        std::fs::write(&path, contents)
            .with_context(|| format!("writing {}", path.display()))?;
        self.manifest.artifacts.push(name.to_string());
        Ok(path)
    }

    /// Records a file written by other means (e.g. the checkpoint writer).
    pub fn record_artifact(&mut self, name: &str) {
        self.manifest.artifacts.push(name.to_string());
    }

    /// Stamps the end time and rewrites the manifest.
    pub fn finalize(mut self) -> Result<PathBuf> {
        self.manifest.finished_at_unix = Some(now_unix());
        self.manifest.artifacts.sort();
        self.manifest.artifacts.dedup();
        self.write_manifest()?;
        Ok(self.path)
    }
}
