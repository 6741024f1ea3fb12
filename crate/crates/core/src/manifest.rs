//! Provenance records written next to every output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// 64-bit content hash: the first 8 bytes of SHA-256, as 16 hex digits.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the manifest's directory when possible.
    pub path: String,
    pub bytes: u64,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub grid: Vec<f64>,
    pub metric: Option<String>,
    pub files: Vec<FileRecord>,
    pub clamped_values: u64,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub created_unix: u64,
}

fn now_unix() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            seeds: BTreeMap::new(),
            grid: Vec::new(),
            metric: None,
            files: Vec::new(),
            clamped_values: 0,
            created_unix: now_unix(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn record_file(&mut self, path: &str, bytes: &[u8]) {
        self.files.push(FileRecord {
            path: path.to_string(),
            bytes: bytes.len() as u64,
            hash: content_hash(bytes),
        });
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| crate::Error::Config(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| crate::Error::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_short() {
        let h = content_hash(b"abc");
        // SHA-256("abc") begins ba7816bf8f01cfea
        assert_eq!(h, "ba7816bf8f01cfea");
        assert_ne!(content_hash(b"abd"), h);
    }
}
