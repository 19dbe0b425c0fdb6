use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Incomplete,
    Complete,
    Failed,
}

/// Record of one command run. Everything except `started_at` is a pure
/// function of the inputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub status: Status,
    pub error: Option<String>,
    pub started_at: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> io::Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: Some(sha256_hex(&fs::read(path)?)),
    })
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value, inputs: &[PathBuf]) -> io::Result<Self> {
        let canonical = serde_json::to_vec(&config).map_err(io::Error::other)?;
        Ok(RunManifest {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            config_sha256: sha256_hex(&canonical),
            config,
            inputs: inputs.iter().map(|p| file_digest(p)).collect::<io::Result<_>>()?,
            outputs: Vec::new(),
            status: Status::Incomplete,
            error: None,
            started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    /// Declare outputs before writing them; digests are filled in by
    /// `complete`.
    pub fn plan(&mut self, outputs: &[PathBuf]) {
        self.outputs = outputs
            .iter()
            .map(|p| FileDigest {
                path: p.display().to_string(),
                sha256: None,
            })
            .collect();
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(dir.join(FILE_NAME), text)
    }

    pub fn complete(&mut self, dir: &Path) -> io::Result<()> {
        for out in &mut self.outputs {
            let path = PathBuf::from(&out.path);
            if path.exists() {
                out.sha256 = Some(sha256_hex(&fs::read(&path)?));
            }
        }
        self.status = Status::Complete;
        self.write(dir)
    }

    pub fn fail(&mut self, dir: &Path, message: &str) -> io::Result<()> {
        self.status = Status::Failed;
        self.error = Some(message.to_owned());
        self.write(dir)
    }
}
