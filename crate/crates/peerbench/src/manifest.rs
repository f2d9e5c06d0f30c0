//! JSON run manifests: resolved parameters, seed, file digests, timestamps
//! and tool version — enough to replay a run.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let k = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
            if k == 0 {
                break;
            }
            h.update(&buf[..k]);
            bytes += k as u64;
        }
        Ok(FileDigest { path: path.to_path_buf(), sha256: hex::encode(h.finalize()), bytes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Every resolved parameter, defaults included, as text.
    pub params: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started: String,
    pub finished: String,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    /// Recomputes output digests and lists files that changed or vanished.
    /// Relative paths are resolved against `base`, the directory the run
    /// was started from.
    pub fn verify_outputs(&self, base: &Path) -> Vec<PathBuf> {
        self.outputs
            .iter()
            .filter(|d| FileDigest::of(&base.join(&d.path)).map(|now| now.sha256 != d.sha256).unwrap_or(true))
            .map(|d| d.path.clone())
            .collect()
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
