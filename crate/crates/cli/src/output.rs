//! Report files: atomic writes and the metadata line that heads every CSV.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `# nsedit <version> config_sha256=<hash>`
pub fn metadata_line(config_hash: &str) -> String {
    format!("# nsedit {VERSION} config_sha256={config_hash}\n")
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let err = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(err)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(err)
}

/// CSV text: the metadata line, a header row, then one row per record.
pub fn csv_bytes<R: Serialize>(rows: &[R], config_hash: &str) -> Result<Vec<u8>> {
    let mut buf = metadata_line(config_hash).into_bytes();
    nsedit_harness::study::write_csv(rows, &mut buf)?;
    Ok(buf)
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R], config_hash: &str) -> Result<()> {
    write_atomic(path, &csv_bytes(rows, config_hash)?)
}
