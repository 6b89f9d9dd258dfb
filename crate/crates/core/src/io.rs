use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{EarError, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`. Parent directories are created as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| EarError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| EarError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| EarError::io(path, e))?;
    tmp.persist(path).map_err(|e| EarError::io(path, e.error))?;
    Ok(())
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| EarError::io(path, e))?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
