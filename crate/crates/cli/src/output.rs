use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

/// Collects one command's files and records them in `manifest.json`.
pub struct RunOutput {
    pub dir: PathBuf,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl RunOutput {
    pub fn new(dir: &Path, command: &'static str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            command,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `effective_config.json` and `manifest.json`.
    pub fn finish(mut self, config: &RunConfig) -> anyhow::Result<()> {
        self.write_json("effective_config.json", config)?;
        let manifest = Manifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())
    }
}
