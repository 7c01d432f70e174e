//! Workdir layout and content-addressed artifact names.

use std::fs;
use std::path::{Path, PathBuf};

use diffnet_core::{Error, Result};
use log::info;
use sha2::{Digest, Sha256};

/// Hex prefix length of artifact names.
const NAME_LEN: usize = 16;

/// SHA-256 over length-prefixed parts, so part boundaries matter.
pub fn content_hash<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// The first [`NAME_LEN`] hex digits of a content hash.
pub fn short(hash: &str) -> &str {
    &hash[..NAME_LEN.min(hash.len())]
}

#[derive(Clone, Debug)]
pub struct Workdir {
    root: PathBuf,
    /// Overwrite artifacts whose name exists with different contents.
    pub force: bool,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>, force: bool) -> Self {
        Workdir { root: root.into(), force }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn sub(&self, name: &str) -> Result<PathBuf> {
        let dir = self.root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    pub fn preprocessed(&self) -> Result<PathBuf> {
        self.sub("preprocessed")
    }

    pub fn checkpoints(&self) -> Result<PathBuf> {
        self.sub("checkpoints")
    }

    pub fn reports(&self) -> Result<PathBuf> {
        self.sub("reports")
    }

    /// Writes `bytes` to `path`. An existing file with the same bytes is left
    /// alone; one with different bytes is only replaced under `force`.
    pub fn write(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Ok(existing) = fs::read(path) {
            if existing == bytes {
                return Ok(());
            }
            if !self.force {
                return Err(Error::Data(format!(
                    "{} already exists with different contents; pass --force to replace it",
                    path.display()
                )));
            }
            info!("replacing {}", path.display());
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}
