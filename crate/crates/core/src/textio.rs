//! Text-format helpers shared by the persistence code.
//!
//! All floating-point values in text artifacts are written in decimal
//! scientific notation with 17 significant digits, which round-trips every
//! finite f64 exactly.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// Format an f64 with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Parse an f64 written by [`fmt_f64`] (or any standard decimal form).
pub fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Invalid(format!("bad float for {what}: {s:?}")))
}

/// Parse an unsigned integer field.
pub fn parse_u64(s: &str, what: &str) -> Result<u64> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| Error::Invalid(format!("bad integer for {what}: {s:?}")))
}

/// Append `key=value` lines for a slice of floats, one line per key.
pub fn push_kv_floats(out: &mut String, key: &str, values: &[f64]) {
    let _ = write!(out, "{key}=");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Read a whole file, mapping failures onto [`Error::Io`].
pub fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write a whole file, mapping failures onto [`Error::Io`].
pub fn write_file(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}
