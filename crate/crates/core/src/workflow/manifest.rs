//! Run manifests and atomic file output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Writes `bytes` to a temporary sibling and renames it over `path`, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// What a command read, wrote and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
        Ok(out)
    }

    pub fn total_seconds(&self) -> f64 {
        self.timings.values().sum()
    }

    /// Path of the manifest belonging to output `path`: `x.csv` gives
    /// `x.manifest.json`.
    pub fn path_for(path: &Path) -> PathBuf {
        path.with_extension("manifest.json")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, (serde_json::to_string_pretty(self)? + "\n").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
