use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{CliError, Command};

pub const MANIFEST_FILE: &str = "manifest.json";

/// An input file and its content hash at the time of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(role: &str, path: &Path) -> Result<FileDigest, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(FileDigest { role: role.into(), path: path.to_path_buf(), sha256: hex(&Sha256::digest(&bytes)) })
    }

    /// Whether the file still has the recorded content.
    pub fn check(&self) -> Result<(), CliError> {
        let now = FileDigest::of(&self.role, &self.path)?;
        if now.sha256 == self.sha256 {
            Ok(())
        } else {
            Err(CliError::Config(format!("{} `{}` changed since the run", self.role, self.path.display())))
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Everything needed to reproduce a run: the resolved command line, input
/// hashes and the effective settings. Written before any computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub inputs: Vec<FileDigest>,
    /// Effective configuration after defaults and scaling.
    pub config: Value,
    /// Worker threads used; results do not depend on it.
    pub jobs: usize,
}

impl RunManifest {
    pub fn new(command: Command, inputs: Vec<FileDigest>, config: Value) -> RunManifest {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            inputs,
            config,
            jobs: rayon::current_num_threads(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))
    }

    pub fn read(dir: &Path) -> Result<RunManifest, CliError> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
    }
}
