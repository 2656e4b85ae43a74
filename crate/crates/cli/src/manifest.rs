//! Run manifest: per-stage status, wall-clock timings, and content hashes of
//! every artifact, so reruns can skip finished work and detect tampering.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub wall_clock_secs: f64,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub tool_version: String,
    /// Snapshot of the experiment config the run was started with.
    pub config: Option<serde_json::Value>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

impl RunManifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_FILE)
    }

    /// Loads the run's manifest, or starts a fresh one.
    pub fn load_or_new(run_dir: &Path) -> std::io::Result<RunManifest> {
        let path = Self::path(run_dir);
        if !path.exists() {
            return Ok(RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                ..RunManifest::default()
            });
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn save(&self, run_dir: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(Self::path(run_dir), text)
    }

    /// Records a completed stage, hashing each artifact as it is now.
    pub fn record_stage(
        &mut self,
        name: &str,
        wall_clock_secs: f64,
        run_dir: &Path,
        artifact_paths: &[PathBuf],
    ) -> std::io::Result<()> {
        let mut artifacts = Vec::with_capacity(artifact_paths.len());
        for path in artifact_paths {
            let rel = path
                .strip_prefix(run_dir)
                .unwrap_or(path)
                .to_string_lossy()
                .replace('\\', "/");
            artifacts.push(ArtifactRecord { path: rel, sha256: hash_file(path)? });
        }
        self.stages.insert(
            name.to_string(),
            StageRecord { status: StageStatus::Done, wall_clock_secs, artifacts },
        );
        Ok(())
    }

    /// True when the stage finished and every artifact still matches its
    /// recorded hash.
    pub fn stage_intact(&self, name: &str, run_dir: &Path) -> bool {
        self.stages
            .get(name)
            .map(|stage| stage.status == StageStatus::Done && self.verify_stage(stage, run_dir).is_empty())
            .unwrap_or(false)
    }

    fn verify_stage(&self, stage: &StageRecord, run_dir: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        for artifact in &stage.artifacts {
            let path = run_dir.join(&artifact.path);
            match hash_file(&path) {
                Ok(hash) if hash == artifact.sha256 => {}
                Ok(_) => problems.push(format!("{}: content hash changed", artifact.path)),
                Err(_) => problems.push(format!("{}: missing", artifact.path)),
            }
        }
        problems
    }

    /// All tampered or missing artifacts across every recorded stage.
    pub fn verify(&self, run_dir: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        for (name, stage) in &self.stages {
            for problem in self.verify_stage(stage, run_dir) {
                problems.push(format!("{name}: {problem}"));
            }
        }
        problems
    }
}
