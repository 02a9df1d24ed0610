//! Number formatting and file plumbing shared by the CSV/JSON exporters.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// 17 significant digits in scientific notation, enough to round-trip any
/// `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `# key: value` metadata lines ahead of a CSV body.
pub fn write_csv_header<W: Write>(out: &mut W, metadata: &[(&str, String)]) -> Result<()> {
    for (key, value) in metadata {
        for line in value.lines() {
            writeln!(out, "# {key}: {line}")?;
        }
    }
    Ok(())
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
