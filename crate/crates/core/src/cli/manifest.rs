//! Run manifests: resolved configuration plus input and output digests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub crc32: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        let data = std::fs::read(path)?;
        Ok(Artifact {
            path: path.display().to_string(),
            crc32: digest(&data),
            bytes: data.len() as u64,
        })
    }
}

pub fn digest(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// Fully resolved command line (without the program name); replaying
    /// parses exactly these arguments.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub dataset_digest: Option<String>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            tool: "ttcast".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            config,
            seed,
            dataset_digest: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(Artifact::of(path)?);
        Ok(self)
    }

    pub fn outputs(mut self, paths: &[PathBuf]) -> Result<Self> {
        for p in paths {
            self.outputs.push(Artifact::of(p)?);
        }
        Ok(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))
    }

    /// Recomputes output digests and lists every artifact that changed.
    pub fn verify_outputs(&self) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for a in &self.outputs {
            let now = Artifact::of(Path::new(&a.path))?;
            if now != *a {
                changed.push(format!("{} (crc32 {} -> {})", a.path, a.crc32, now.crc32));
            }
        }
        Ok(changed)
    }
}

/// `<path>.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
