//! Reproducibility manifest embedded in output artifacts, plus small file
//! helpers shared by the writers: atomic writes and full-precision float
//! formatting.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Identifies the run that produced an artifact. Contains no wall-clock
/// information, so identical configs produce byte-identical artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub format_version: u32,
    /// SHA-256 of the effective run configuration.
    pub config_sha256: String,
}

impl Manifest {
    pub fn new(config_bytes: &[u8]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_bytes);
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        Manifest {
            tool: "avfusion".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            format_version: 1,
            config_sha256: hex,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("manifest serialization cannot fail")
    }

    /// Comment line embedded at the top of CSV and text artifacts.
    pub fn comment_line(&self) -> String {
        format!("# manifest {}", self.to_json())
    }
}

/// Formats an `f64` with 17 significant digits, enough to round-trip exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes via a temp file in the same directory and renames into place.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
