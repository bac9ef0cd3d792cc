//! Content-addressed storage for stage outputs.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 over the given parts, separated so that `["ab", "c"]` and
/// `["a", "bc"]` differ.
pub fn cache_key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex(&h.finalize())
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stage outputs stored as `<dir>/<stage>-<key>.<ext>`.
#[derive(Clone, Debug)]
pub struct StageCache {
    dir: Option<PathBuf>,
    verify: bool,
}

impl StageCache {
    pub fn new(dir: PathBuf, verify: bool) -> StageCache {
        StageCache {
            dir: Some(dir),
            verify,
        }
    }

    /// A cache that stores nothing.
    pub fn disabled() -> StageCache {
        StageCache {
            dir: None,
            verify: false,
        }
    }

    /// Returns the cached value for `key`, or computes, stores and returns
    /// it. With verification on, a hit is recomputed and its serialized
    /// bytes must match the stored file.
    pub fn get_or_compute<T>(
        &self,
        stage: &str,
        key: &str,
        ext: &str,
        compute: impl FnOnce() -> Result<T>,
        write: impl Fn(&T, &Path) -> Result<()>,
        read: impl Fn(&Path) -> Result<T>,
    ) -> Result<T> {
        let Some(dir) = &self.dir else {
            return compute();
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{stage}-{key}.{ext}"));
        if path.exists() {
            if self.verify {
                let fresh = compute()?;
                let tmp = dir.join(format!("{stage}-{key}.verify.{ext}"));
                write(&fresh, &tmp)?;
                let same = fs::read(&tmp).map_err(|e| Error::io(&tmp, e))?
                    == fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let _ = fs::remove_file(&tmp);
                if !same {
                    return Err(Error::Format(format!(
                        "cached {stage} output {} differs from a fresh computation",
                        path.display()
                    )));
                }
                return Ok(fresh);
            }
            log::debug!("cache hit: {}", path.display());
            return read(&path);
        }
        let value = compute()?;
        let tmp = dir.join(format!("{stage}-{key}.partial.{ext}"));
        write(&value, &tmp)?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(value)
    }
}
