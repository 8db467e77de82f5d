//! Run configuration: one JSON document covering the model, training,
//! evaluation, and generator settings plus output paths. Every field has a
//! default, unknown keys are errors, and flags win over file values. The
//! SHA-256 of the canonical serialization identifies a run in every
//! artifact.

use anyhow::{Context, Result};
use bcat_core::datagen::GenSpec;
use bcat_core::eval::EvalConfig;
use bcat_core::model::ModelConfig;
use bcat_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Training-data manifest.
    pub data: Option<PathBuf>,
    /// Evaluation manifests.
    pub test_data: Vec<PathBuf>,
    /// Checkpoint to load.
    pub checkpoint: Option<PathBuf>,
    /// Trajectory file for rollout input.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub datagen: GenSpec,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(cfg)
    }

    /// Canonical serialization (stable field order from the struct layout).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Dump the effective config next to the outputs so any run is
    /// reproducible from its artifacts alone.
    pub fn dump(&self, out_dir: &Path, command: &str) -> Result<String> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create {}", out_dir.display()))?;
        let hash = self.hash();
        fs::write(out_dir.join("config.json"), self.canonical_json())
            .context("cannot write effective config")?;
        let run = serde_json::json!({
            "command": command,
            "config_hash": hash,
        });
        fs::write(
            out_dir.join("run.json"),
            serde_json::to_string_pretty(&run).expect("run info serializes"),
        )
        .context("cannot write run info")?;
        Ok(hash)
    }
}
