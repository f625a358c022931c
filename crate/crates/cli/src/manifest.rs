use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use uvpose_core::io::write_json;

/// Provenance record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Stage name and duration in milliseconds, in execution order.
    pub stages: Vec<(String, f64)>,
    pub total_ms: f64,
}

pub fn hash_config<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Back-to-back stage timer: every instant between start and the last lap
/// is attributed to exactly one stage.
pub struct StageTimer {
    start: Instant,
    last: Instant,
    stages: Vec<(String, f64)>,
}

impl StageTimer {
    pub fn start() -> Self {
        let now = Instant::now();
        Self { start: now, last: now, stages: Vec::new() }
    }

    pub fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push((name.to_string(), (now - self.last).as_secs_f64() * 1e3));
        self.last = now;
    }

    pub fn finish(self) -> (Vec<(String, f64)>, f64) {
        let total = (self.last - self.start).as_secs_f64() * 1e3;
        (self.stages, total)
    }
}

/// `out.csv` → `out.csv.manifest.json`, `dir` → `dir.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let trimmed = output.components().collect::<PathBuf>();
    let mut name = trimmed.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "run".into());
    name.push(".manifest.json");
    trimmed.with_file_name(name)
}

pub struct ManifestBuilder {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn write(self, timer: StageTimer, primary_output: &Path) -> uvpose_core::Result<PathBuf> {
        let (stages, total_ms) = timer.finish();
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config_hash: self.config_hash,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            stages,
            total_ms,
        };
        let path = manifest_path(primary_output);
        write_json(&path, &manifest)?;
        Ok(path)
    }
}
