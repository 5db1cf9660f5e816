//! JSONL artifact files and their `.manifest.json` sidecars.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("missing manifest {0}")]
    MissingManifest(PathBuf),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a value's canonical JSON form (object keys sorted).
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let canonical: serde_json::Value = serde_json::to_value(value).expect("serializable value");
    sha256_hex(canonical.to_string().as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ArtifactError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ArtifactError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut w, item).expect("serializable item");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Provenance written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// "prompts", "predictions", "outcomes", ...
    pub artifact: String,
    pub code_version: String,
    pub config_hash: String,
    /// Hash of the configuration that determines prompt text.
    pub prompt_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

impl Manifest {
    pub fn write_for(&self, artifact: &Path) -> Result<(), ArtifactError> {
        let path = manifest_path(artifact);
        let mut text = serde_json::to_string_pretty(self).expect("serializable manifest");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read_for(artifact: &Path) -> Result<Manifest, ArtifactError> {
        let path = manifest_path(artifact);
        if !path.exists() {
            return Err(ArtifactError::MissingManifest(path));
        }
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| ArtifactError::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }
}
