//! Canonical JSON encoding.
//!
//! Values are routed through [`serde_json::Value`], whose object map is
//! ordered, so keys always come out sorted. Floats use the shortest
//! representation that round-trips.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn to_canonical_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    let mut out = serde_json::to_string_pretty(&value)?;
    out.push('\n');
    Ok(out)
}

/// Writes through a sibling temporary file and a rename, so an interrupted
/// run never leaves a truncated file behind.
pub fn write_canonical<T: Serialize>(value: &T, path: &std::path::Path) -> std::io::Result<()> {
    let text = to_canonical_string(value).map_err(std::io::Error::other)?;
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::other(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical encoding of `value`.
pub fn canonical_hash<T: Serialize>(value: &T) -> serde_json::Result<String> {
    Ok(sha256_hex(to_canonical_string(value)?.as_bytes()))
}
