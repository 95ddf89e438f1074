//! Dataset manifest: a JSON list of (audio, labels, split) entries with
//! paths relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::Split;
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "hlmelody-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: PathBuf,
    pub labels: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Free-form record of how the dataset was produced.
    pub config: serde_json::Value,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(config: serde_json::Value, entries: Vec<ManifestEntry>) -> Self {
        Manifest { format: MANIFEST_FORMAT.into(), version: MANIFEST_VERSION, config, entries }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Mismatch(format!(
                "unsupported manifest {} v{} (expected {MANIFEST_FORMAT} v{MANIFEST_VERSION})",
                m.format, m.version
            )));
        }
        let mut ids: Vec<&str> = m.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Mismatch("duplicate clip ids in manifest".into()));
        }
        Ok(m)
    }
}

/// Resolve an entry path against the manifest location.
pub fn resolve(manifest_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}
