//! Run manifests: a JSON sidecar `<artifact>.manifest.json` next to the
//! primary output of every command.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use merge_index::io::codebook_file::FORMAT_VERSION;
use merge_index::IndexConfig;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub codebook_format: u32,
    pub seed: Option<u64>,
    pub config: Option<IndexConfig>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub step_log: Option<PathBuf>,
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn digests(paths: &[&Path]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.to_path_buf(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

pub fn sidecar(artifact: &Path, suffix: &str) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            codebook_format: FORMAT_VERSION,
            seed: None,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            step_log: None,
            summary: serde_json::Value::Null,
        }
    }

    /// Writes the manifest beside `artifact` and returns its path.
    pub fn write_for(&self, artifact: &Path) -> Result<PathBuf> {
        let path = sidecar(artifact, ".manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
