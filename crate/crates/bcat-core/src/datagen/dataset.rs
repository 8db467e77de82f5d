//! Dataset writer: N trajectories plus a JSON manifest.

use super::{generate, GenError, GenSpec};
use crate::dataio::write_trajectory;
use crate::rng::splitmix64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub seed: u64,
    pub frames: usize,
    pub resolution: usize,
    pub channels: usize,
}

/// Index of a generated dataset; paths are relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub family: String,
    pub files: Vec<ManifestEntry>,
    pub generator: GenSpec,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, GenError> {
        let text = fs::read_to_string(path).map_err(|e| {
            GenError::Data(crate::dataio::DataError::Io { path: path.display().to_string(), source: e })
        })?;
        serde_json::from_str(&text).map_err(|e| {
            GenError::Data(crate::dataio::DataError::Format {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), GenError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| {
            GenError::Data(crate::dataio::DataError::Io { path: path.display().to_string(), source: e })
        })?;
        Ok(())
    }
}

/// Per-trajectory seed: index offset pushed through splitmix64.
pub fn trajectory_seed(base_seed: u64, index: u64) -> u64 {
    let mut s = base_seed.wrapping_add(index);
    splitmix64(&mut s)
}

/// Generate `n_traj` trajectories from the template (each with its own
/// derived seed), write them under `out_dir`, and return the manifest
/// (also written as `manifest.json`). Deterministic: same template and seed
/// give byte-identical files.
pub fn make_dataset(
    template: &GenSpec,
    n_traj: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest, GenError> {
    if n_traj == 0 {
        return Err(GenError::BadSpec("n_traj must be at least 1".into()));
    }
    template.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| {
        GenError::Data(crate::dataio::DataError::Io { path: out_dir.display().to_string(), source: e })
    })?;

    let mut files = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let traj_seed = trajectory_seed(seed, i as u64);
        let spec = GenSpec { seed: traj_seed, ..template.clone() };
        let traj = generate(&spec)?;
        let name = format!("{}_{:05}.btrj", template.family.as_str(), i);
        write_trajectory(&traj, &out_dir.join(&name))?;
        files.push(ManifestEntry {
            path: name,
            seed: traj_seed,
            frames: traj.t_total,
            resolution: traj.height,
            channels: traj.valid_channels,
        });
    }

    let manifest = Manifest {
        version: 1,
        family: template.family.as_str().to_string(),
        files,
        generator: GenSpec { seed, ..template.clone() },
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
