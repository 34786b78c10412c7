use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: io::sha256_file(path)?,
        })
    }
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub options: Value,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
    pub seed: Option<u64>,
    /// Unix seconds.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, options: Value, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            options,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        self.inputs.insert(key.into(), FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, key: &str, path: &Path) -> Result<()> {
        self.outputs.insert(key.into(), FileDigest::of(path)?);
        Ok(())
    }

    /// Adds a resolved value under `options.resolved.<key>`.
    pub fn resolved(&mut self, key: &str, value: Value) {
        if let Value::Object(map) = &mut self.options {
            let entry = map.entry("resolved").or_insert_with(|| Value::Object(Default::default()));
            if let Value::Object(r) = entry {
                r.insert(key.into(), value);
            }
        }
    }

    /// The manifest with its timestamp cleared, for rerun comparisons.
    pub fn without_timestamp(&self) -> Self {
        Self { timestamp: 0, ..self.clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        io::write_bytes(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&io::read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// `model.hkdm` → `model.hkdm.manifest.json`.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}
