use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

/// Written next to the outputs of every run that produces files.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
    pub tool_version: &'static str,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_paths: Vec<PathBuf>,
        seed: u64,
        outputs: Vec<PathBuf>,
    ) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            config_paths,
            seed,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
