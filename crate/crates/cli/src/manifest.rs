use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name; `fcnroute replay` re-runs them.
    pub args: Vec<String>,
    /// Every flag after defaults were applied.
    pub flags: serde_json::Value,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn read(path: &Path) -> Result<RunManifest, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read manifest {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("manifest {} is not valid: {e}", path.display()))
    }
}

/// `FILE.manifest.json` next to `FILE`.
pub fn beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
