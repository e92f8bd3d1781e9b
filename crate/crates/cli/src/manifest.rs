//! Output directory guard and the per-run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use emocap_core::formats;

use crate::config::Resolved;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    /// Command-line arguments without the output directory.
    pub args: Vec<String>,
    pub config: BTreeMap<String, Value>,
    pub inputs: BTreeMap<String, InputRecord>,
    pub outputs: BTreeMap<String, String>,
    pub metadata: BTreeMap<String, Value>,
}

/// Collects the files a subcommand writes, all directly inside one directory.
pub struct OutDir {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
    inputs: BTreeMap<String, InputRecord>,
    metadata: BTreeMap<String, Value>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: BTreeMap::new(),
            inputs: BTreeMap::new(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        if name.is_empty() || name.contains(['/', '\\']) || name == ".." || name == "." {
            bail!("refusing to write {name:?} outside the output directory");
        }
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Read an input file, recording its fingerprint under `role`.
    pub fn read_input(&mut self, role: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading {role} file {}", path.display()))?;
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                path: path.to_path_buf(),
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(bytes)
    }

    pub fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.metadata.insert(key.to_string(), value.into());
    }

    /// Write `run_config.toml` and `manifest.json`.
    pub fn finish(
        mut self,
        command: &str,
        args: &[String],
        resolved: &Resolved,
    ) -> Result<Manifest> {
        self.write("run_config.toml", resolved.to_toml()?.as_bytes())?;
        let config = resolved
            .recorded_fields()
            .into_iter()
            .map(|(k, f)| (k.to_string(), serde_json::to_value(f).unwrap()))
            .collect();
        let manifest = Manifest {
            format: formats::MANIFEST.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: args.to_vec(),
            config,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            metadata: self.metadata.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.format != formats::MANIFEST {
            bail!(
                "{} is not a run manifest (format {:?})",
                path.display(),
                m.format
            );
        }
        Ok(m)
    }
}

/// Drop `--out-dir <dir>` / `--out-dir=<dir>` from an argument list.
pub fn strip_out_dir(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out-dir" {
            skip = true;
            continue;
        }
        if a.starts_with("--out-dir=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}
