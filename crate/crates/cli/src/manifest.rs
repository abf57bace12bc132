use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;

/// Provenance record written next to every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started: String,
    pub finished: String,
    pub tool_version: String,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_path: None,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: now(),
            finished: String::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    /// Stamps the finish time and writes `path` atomically.
    pub fn finish(mut self, path: &Path) -> std::io::Result<()> {
        self.finished = now();
        let json = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        tilkit::io::write_atomic_bytes(path, json.as_bytes())
    }
}

/// `out.json` → `out.json.manifest.json`.
pub fn beside(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}
