//! Run manifests: every command records its resolved configuration, seed
//! and outputs, so a run can be reproduced byte-for-byte (wall-time fields
//! excepted).

use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Fully resolved configuration of the run.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_ms: f64,
    /// Command-specific details (timings, counts).
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

pub struct ManifestBuilder {
    start: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            start: Instant::now(),
            manifest: RunManifest {
                command: command.to_owned(),
                tool_version: cayk_core::TOOL_VERSION.to_owned(),
                seed,
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_time_ms: 0.0,
                details: serde_json::Value::Null,
            },
        }
    }

    pub fn config(&mut self, value: impl Serialize) -> &mut Self {
        self.manifest.config = serde_json::to_value(value).expect("serializable config");
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.display().to_string());
        self
    }

    pub fn details(&mut self, value: impl Serialize) -> &mut Self {
        self.manifest.details = serde_json::to_value(value).expect("serializable details");
        self
    }

    pub fn write(mut self, path: &Path) -> std::io::Result<()> {
        self.manifest.wall_time_ms = self.start.elapsed().as_secs_f64() * 1e3;
        let text = serde_json::to_string_pretty(&self.manifest).expect("serializable manifest");
        std::fs::write(path, text)
    }
}

/// Default manifest location: `<primary output>.manifest.json`.
pub fn default_manifest_path(primary_output: &Path) -> PathBuf {
    let mut os = primary_output.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}
